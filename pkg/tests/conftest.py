import numpy as np
import pytest

from filtann.bench.datasets import desk_dataset, desk_queries
from filtann.graph import BuildParams, build


@pytest.fixture(scope="session")
def small_ds():
    return desk_dataset(count=1000, dim=32, seed=11)


@pytest.fixture(scope="session")
def small_index(small_ds):
    return build(small_ds, BuildParams())


@pytest.fixture(scope="session")
def small_queries():
    return np.random.default_rng(99).random((100, 32), dtype=np.float32)


@pytest.fixture(scope="session")
def desk_ds():
    return desk_dataset()


@pytest.fixture(scope="session")
def desk_index(desk_ds):
    return build(desk_ds, BuildParams(M=32, efc=40, seed=42))


@pytest.fixture(scope="session")
def desk_q():
    return desk_queries(1000)
