import numpy as np
import pytest
import torch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_complex(rng, *shape, dtype=torch.complex128):
    arr = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return torch.from_numpy(arr).to(dtype)


@pytest.fixture
def small_split():
    from unpaired_mri.data import build_split

    return build_split(
        M=5, N=3, regime="disjoint", label_mode="magnitude",
        acceleration=3.0, coils=1, seed=11, H=64, W=64,
    )
