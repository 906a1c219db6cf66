import numpy as np
import pytest

from binlab.dataset import synth_toy_corpus
from binlab.trainer import StageEpochs, TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def reduced_config():
    """Desk-scale network spec: depth 2, base 8, 64x64 patches."""
    return TrainConfig(
        epochs=StageEpochs(1, 1, 1, 1),
        batch_size=4,
        patch_size=64,
        gen_base_channels=8,
        gen_depth=2,
        disc_base_channels=8,
        disc_depth=2,
        seed=0,
    )


@pytest.fixture
def toy_corpus(tmp_path):
    """Eight-image toy corpus with its manifest."""
    manifest = synth_toy_corpus(tmp_path / "data", 8, np.random.default_rng(7), image_size=96)
    return manifest
