import numpy as np
import pytest
import torch

from scenefit import builtin_bank

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def bank():
    return builtin_bank()


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
