import numpy as np
import pytest

from nnif import model as nn


@pytest.fixture
def tiny_net():
    """A 2-4-2 net (22 parameters) with a small labelled batch."""
    params = nn.init_model([2, 4, 2], 7)
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (6, 2))
    y = rng.integers(0, 2, 6)
    return params, x, y


@pytest.fixture(scope="session")
def blob_model():
    """A small MLP trained on 3-class Gaussian blobs, with its correctly classified test points."""
    from nnif import data as dt

    ds = dt.split(dt.gen_gaussian_blobs(3, 200, 8, 0.08, 0, spacing=0.3), 400, 50, 150, 0)
    x, y, _ = ds.subset("train")
    params = nn.train(nn.init_model([8, 12, 6, 3], 0), x, y, nn.TrainConfig(lr=0.05, epochs=40))
    idx = dt.filter_correct(params, ds, "test")
    return params, ds, idx
