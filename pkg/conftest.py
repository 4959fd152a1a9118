"""
Shared pytest fixtures: a tiny model configuration and seeded generators.
"""

import numpy as np
import pytest
import torch

from maggie.config import ModelConfig, OptimConfig, RunConfig


TINY_CHANNELS = (8, 8, 8, 16)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="Run the slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains models for minutes; skipped unless --runslow is given")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    return ModelConfig(
        channels=TINY_CHANNELS,
        attention_heads=2,
        attention_rounds=1,
        max_instances=4,
        prm_kernels=(5, 3),
    )


@pytest.fixture
def tiny_run_config(tiny_model_config, tmp_path):
    return RunConfig(
        model=tiny_model_config,
        optim=OptimConfig(
            steps=2,
            image_steps=1,
            warmup_steps=0,
            batch_size=1,
            crop_size=32,
            clip_len=3,
            checkpoint_every=1,
        ),
        out_dir=tmp_path / "run",
    )


def one_hot_masks(t: int, n: int, h: int, w: int, generator=None) -> torch.Tensor:
    """(T, N, H, W) masks where every pixel belongs to at most one instance"""
    labels = torch.randint(0, n + 1, (t, h, w), generator=generator)
    return torch.stack([(labels == i + 1).float() for i in range(n)], dim=1)
