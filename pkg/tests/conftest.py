import numpy as np
import pytest

from amil.bagnet import BagModel
from amil.synthdata import EventFamily


@pytest.fixture
def shift():
    return EventFamily("gauss-shift")


@pytest.fixture
def logvar():
    return EventFamily("gauss-logvar")


@pytest.fixture
def tiny_model():
    """Miniature topology used for exhaustive gradient checks."""

    def make(head="binary", n_features=2, n_classes=3, seed=0, **kw):
        kw.setdefault("width", 4)
        return BagModel.create(head, n_features, n_classes=n_classes, seed=seed, **kw)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
