import numpy as np
import pytest

from preqdag.services.dataset import Dataset, mask_path_for, read_csv
from preqdag.utils.exceptions import DataException


@pytest.fixture
def sparse_csv(tmp_path):
    """Two categorical columns whose top categories never occur"""
    dataset = Dataset(["A", "B"], np.array([[0, 1], [1, 0], [0, 2]]), (4, 5))
    path = tmp_path / "data.csv"
    dataset.write_csv(path, mask_path_for(path))
    return path


def test_explicit_cardinalities_survive_the_round_trip(sparse_csv) -> None:
    dataset = read_csv(sparse_csv, mask_path_for(sparse_csv), cardinalities=[4, 5])
    assert dataset.cardinalities == (4, 5)
    assert dataset.is_categorical
    np.testing.assert_array_equal(dataset.values, [[0, 1], [1, 0], [0, 2]])
    assert not dataset.mask.any()


def test_cardinalities_are_inferred_without_hints(sparse_csv) -> None:
    assert read_csv(sparse_csv).cardinalities == (2, 3)
    assert read_csv(sparse_csv, kind="continuous").cardinalities is None


def test_mask_path_is_a_sibling() -> None:
    assert mask_path_for("runs/x/data.csv").as_posix() == "runs/x/data.mask.csv"


@pytest.mark.parametrize(
    "kwargs",
    [
        {"cardinalities": [4]},
        {"cardinalities": [1, 5]},
        {"cardinalities": [4, 5], "kind": "continuous"},
    ],
)
def test_bad_cardinalities_are_rejected(sparse_csv, kwargs) -> None:
    with pytest.raises(DataException):
        read_csv(sparse_csv, **kwargs)
