import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_dataset(rng, n_low, n_high, dim=2):
    """Random standardized multi-fidelity dataset for structural tests."""
    from mfgpc.data import HIGH, LOW, LabeledDataset

    X = rng.uniform(0, 1, size=(n_low + n_high, dim))
    y = rng.integers(0, 2, size=n_low + n_high)
    fid = np.array([LOW] * n_low + [HIGH] * n_high, dtype="U1")
    return LabeledDataset(inputs=X, labels=y, fidelity=fid)
