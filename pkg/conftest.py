import pytest

from mer_util.config import RunConfig
from mer_util.dataset import load_clips, read_manifest
from mer_util.synthetic import generate_synthetic

# 2 subjects x 2 clips of 3 classes, frames already at the reduced model size
TINY = dict(seed=7, n_subjects=2, clips_per_subject=2, n_classes=3, t=3, frame_size=16, video_length=5)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    generate_synthetic(
        root,
        TINY["seed"],
        TINY["n_subjects"],
        TINY["clips_per_subject"],
        TINY["n_classes"],
        t=TINY["t"],
        frame_size=TINY["frame_size"],
        video_length=TINY["video_length"],
    )
    return root / "manifest.json"


@pytest.fixture(scope="session")
def tiny_manifest(tiny_dataset):
    return read_manifest(tiny_dataset)


@pytest.fixture
def tiny_clips(tiny_manifest):
    return load_clips(tiny_manifest)


@pytest.fixture
def tiny_run_config():
    return RunConfig(reduced=True, epochs=2, batch_size=4, lr=1e-3, flip_probability=0.0)
