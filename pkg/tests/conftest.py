import numpy as np
import pytest

from infogeom.eiga import virtual_noise
from infogeom.model import PriorModel, observe, sample_channel
from infogeom.operators import DenseOperator
from infogeom.rng import make_rng


def random_variances(m, seed):
    rng = make_rng(seed, 99)
    v = np.exp(rng.uniform(np.log(0.1), np.log(10.0), m))
    return v / v.mean()


def dense_instance(n, m, seed, noise_var=0.1, calibrate=False):
    """Random unit-magnitude problem: (op, prior, h, y)."""
    variances = random_variances(m, seed)
    virtual = virtual_noise(noise_var, variances, n) if calibrate else None
    prior = PriorModel(variances, noise_var, virtual)
    op = DenseOperator.random_unit(n, m, seed)
    h = sample_channel(prior, seed)
    y = observe(op, h, noise_var, seed).y
    return op, prior, h, y


@pytest.fixture
def small_dense():
    return dense_instance(32, 8, 0)


@pytest.fixture
def rng():
    return make_rng(12345, 0)
