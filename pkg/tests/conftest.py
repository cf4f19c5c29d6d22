"""
Shared pytest setup: repository root on sys.path, slow-test switch and small fixtures.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.core.config import ModelConfig, TrainConfig  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow directional tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running directional experiment")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    """16x16 images, 4-pixel patches: 16 tokens, two small layers each side."""
    return ModelConfig(
        image_size=16,
        patch_size=4,
        embed_dim=16,
        decoder_dim=8,
        encoder_layers=2,
        decoder_layers=2,
        heads=2,
        mlp_ratio=2.0,
        seed=3,
    )


@pytest.fixture
def tiny_train_config() -> TrainConfig:
    return TrainConfig(
        epochs=3,
        batch_size=4,
        learning_rate=1e-3,
        warmup_epochs=1,
        masking_ratio=0.5,
        hint_ratio=0.1,
        probe_size=4,
        checkpoint_every=0,
        diagnostics_every=0,
        seed=5,
    )


@pytest.fixture
def tiny_images() -> np.ndarray:
    rng = np.random.default_rng(11)
    return rng.uniform(0.0, 1.0, size=(8, 16, 16, 3)).astype(np.float32)


def random_attention(rng: np.random.Generator, n: int) -> np.ndarray:
    """Row-stochastic n x n matrix with strictly positive entries."""
    logits = rng.standard_normal((n, n))
    probs = np.exp(logits)
    return probs / probs.sum(axis=1, keepdims=True)
