"""Run configuration resolved from flags, a JSON file and defaults.

Precedence: command-line flags > JSON file > `RunConfig` defaults. The JSON
file is a flat object whose keys are `RunConfig` field names.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional

from mer_util import constants
from mer_util.constants import FccMode, Fusion
from mer_util.errors import ConfigurationError, FormatError
from mer_util.losses import LossWeights
from mer_util.model import ModelConfig
from mer_util.parameters import check_seed


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of training and evaluation, with the method's defaults."""

    seed: int = 0
    epochs: int = constants.EPOCHS
    batch_size: int = constants.BATCH_SIZE
    lr: float = constants.LEARNING_RATE
    beta1: float = constants.BETA1
    beta2: float = constants.BETA2
    eps: float = constants.EPSILON
    lambda_f: float = constants.LAMBDA_FLOW
    lambda_m: float = constants.LAMBDA_LANDMARK
    workers: int = 1
    flip_probability: float = constants.FLIP_PROBABILITY
    # model
    n_classes: Optional[int] = None
    t: Optional[int] = None
    k: Optional[int] = None
    f5c_blocks: int = constants.F5C_BLOCKS
    use_fcc: bool = True
    use_ccc: bool = True
    fcc_mode: FccMode = FccMode.full
    fusion: Fusion = Fusion.concat
    use_mer: bool = True
    use_flow: bool = True
    use_landmark: bool = True
    in_channels: int = 1
    reduced: bool = False

    def __post_init__(self) -> None:
        check_seed(self.seed)
        if self.epochs < 1 or self.batch_size < 1 or self.workers < 1:
            raise ConfigurationError("epochs, batch_size and workers must be positive")
        if self.lr <= 0:
            raise ConfigurationError(f"lr = {self.lr}")
        if not 0 <= self.flip_probability <= 1:
            raise ConfigurationError(f"flip_probability = {self.flip_probability}")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_f, self.lambda_m)

    def model_config(self, n_classes: int, t: int, n_landmarks: int = constants.N_LANDMARKS) -> ModelConfig:
        """Model geometry for a dataset; explicit `n_classes`, `t` and `k` settings win."""
        values = dict(
            n_classes=self.n_classes if self.n_classes is not None else n_classes,
            t=self.t if self.t is not None else t,
            n_landmarks=n_landmarks,
            in_channels=self.in_channels,
            f5c_blocks=self.f5c_blocks,
            use_fcc=self.use_fcc,
            use_ccc=self.use_ccc,
            fcc_mode=self.fcc_mode,
            fusion=self.fusion,
            use_mer=self.use_mer,
            use_flow=self.use_flow,
            use_landmark=self.use_landmark,
        )
        if self.k is not None:
            values["k"] = self.k
        if self.reduced:
            return ModelConfig.reduced(**values)
        return ModelConfig(**values)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_ENUMS = {"fcc_mode": FccMode, "fusion": Fusion}


def _kind(name: str) -> str:
    # annotations are strings here, e.g. "Optional[int]"
    return str(_FIELDS[name].type).removeprefix("Optional[").removesuffix("]")


def _coerce(name: str, value: Any) -> Any:
    if name in _ENUMS and not isinstance(value, _ENUMS[name]):
        try:
            return _ENUMS[name](value)
        except ValueError as e:
            choices = ", ".join(m.value for m in _ENUMS[name])
            raise ConfigurationError(f"{name}: {value!r} is not one of {choices}") from e

    if value is None and str(_FIELDS[name].type).startswith("Optional["):
        return None
    kind = _kind(name)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigurationError(f"{name}: expected true or false, received {value!r}")
        return value
    if kind not in ("int", "float"):
        return value
    if isinstance(value, bool):
        raise ConfigurationError(f"{name}: expected a number, received {value!r}")

    expected = "a finite number" if kind == "float" else "an integer"
    try:
        number = float(value) if kind == "float" else int(value)
    except (TypeError, ValueError, OverflowError) as e:
        raise ConfigurationError(f"{name}: expected {expected}, received {value!r}") from e
    if not math.isfinite(number) or (kind == "int" and isinstance(value, float) and number != value):
        raise ConfigurationError(f"{name}: expected {expected}, received {value!r}")
    return number


def load_config_file(path: Path) -> dict[str, Any]:
    """Read a JSON configuration file.

    Raises:
        FileNotFoundError: When the file is missing.
        FormatError: When it is not a JSON object.
        ConfigurationError: On unknown keys.
    """
    path = Path(path)
    try:
        values = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(path, f"invalid JSON: {e}") from e
    if not isinstance(values, dict):
        raise FormatError(path, "expected a JSON object")
    if unknown := sorted(set(values) - set(_FIELDS)):
        raise ConfigurationError(f"{path}: unknown configuration keys: {', '.join(unknown)}")
    return values


def resolve_run_config(
    file_values: Optional[Mapping[str, Any]] = None, flag_values: Optional[Mapping[str, Any]] = None
) -> RunConfig:
    """Merge file values and flags over the defaults.

    Flags whose value is None count as not given.

    Raises:
        ConfigurationError: On unknown keys or invalid values.
    """
    merged: dict[str, Any] = {}
    for source in (file_values or {}, flag_values or {}):
        for name, value in source.items():
            if value is None:
                continue
            if name not in _FIELDS:
                raise ConfigurationError(f"unknown configuration key {name!r}")
            merged[name] = _coerce(name, value)
    return RunConfig(**merged)
