import os
from typing import Callable

import numpy as np
import pytest

from preqdag.services.datagen import gen_tabular_network
from preqdag.services.dataset import Dataset
from preqdag.services.graph import Dag, random_gnp_dag


def pytest_collection_modifyitems(config, items) -> None:
    if os.getenv("RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="Set RUN_SLOW=1 to run slow tests.")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def chain_dag() -> Dag:
    return Dag.from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def random_categorical() -> Callable[..., Dataset]:
    """Factory of small seeded categorical datasets with an optional random mask"""

    def make(seed: int, num_nodes: int = 3, n: int = 60, max_card: int = 3, mask_rate: float = 0.0) -> Dataset:
        rng = np.random.default_rng(seed)
        cards = rng.integers(2, max_card + 1, size=num_nodes)
        values = np.column_stack([rng.integers(0, c, size=n) for c in cards])
        mask = rng.random((n, num_nodes)) < mask_rate
        names = [chr(ord("A") + d) for d in range(num_nodes)]
        return Dataset(names, values, tuple(int(c) for c in cards), mask)

    return make


@pytest.fixture
def random_network_sample():
    """Factory of seeded categorical network samples on a random GNP structure"""

    def make(seed: int, num_nodes: int = 3, n: int = 500, cardinality: int = 3):
        dag = random_gnp_dag(num_nodes, 0.6, seed)
        return gen_tabular_network(dag, [cardinality] * num_nodes, 1.0, n, seed)

    return make
