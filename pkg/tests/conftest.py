from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synth import build_image_tree  # noqa: E402

from defectlab.classifier import ModelConfig  # noqa: E402
from defectlab.dataset import scan_directory  # noqa: E402

TINY_MODEL = ModelConfig(backbone="tiny_cnn", head_widths=(8, 4),
                         l2_lambda=1e-3, input_side=32)


@pytest.fixture
def tiny_model_cfg() -> ModelConfig:
    return TINY_MODEL


@pytest.fixture
def make_dataset(tmp_path):
    """Factory building a synthetic split_dirs dataset and returning its manifest."""

    def _make(train: int = 24, validation: int = 12, test: int = 12,
              side: int = 32, seed: int = 0, hard_fraction: float = 0.3,
              name: str = "data"):
        root = tmp_path / name
        build_image_tree(root, {"train": train, "validation": validation,
                                "test": test}, side=side, seed=seed,
                         hard_fraction=hard_fraction)
        return scan_directory(root)

    return _make


@pytest.fixture(scope="session")
def shared_dataset(tmp_path_factory):
    """Medium synthetic dataset shared by slower training tests."""
    root = tmp_path_factory.mktemp("shared") / "data"
    build_image_tree(root, {"train": 80, "validation": 40, "test": 40},
                     side=32, seed=7)
    return scan_directory(root)
