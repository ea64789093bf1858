from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = ROOT / "data" / "mnist5k"
CONFIGS = ROOT / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _data_dir(monkeypatch):
    # config files use repository-relative data paths
    monkeypatch.setenv("BYZADMM_DATA_DIR", str(ROOT))
