import numpy as np
import pytest
from hypothesis import settings

from shiftkrr.kernels import KernelSpec

settings.register_profile("default", max_examples=200, deadline=None)
settings.load_profile("default")

ALL_SPECS = [
    KernelSpec.linear(),
    KernelSpec.affine(),
    KernelSpec.polynomial(2, homogeneous=True),
    KernelSpec.polynomial(3),
    KernelSpec.gaussian(2.0),
    KernelSpec.laplace(1.0),
    KernelSpec.sobolev(),
]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_covariates(spec, n, d, rng):
    if spec.kind.value == "sobolev":
        return rng.random((n, 1))
    return rng.standard_normal((n, d))
