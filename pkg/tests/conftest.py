import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gbnn.data import Dataset, onehot  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def digits():
    """UCI Digits (the copy bundled with scikit-learn)."""
    from sklearn.datasets import load_digits
    d = load_digits()
    return Dataset(d.data, onehot(d.target, 10), [str(i) for i in range(10)])


@pytest.fixture(scope="session")
def digits_csv(tmp_path_factory, digits):
    path = tmp_path_factory.mktemp("data") / "digits.csv"
    rows = np.column_stack([digits.features, digits.labels]).astype(int)
    np.savetxt(path, rows, fmt="%d", delimiter=",")
    return path
