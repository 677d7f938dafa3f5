import math

import numpy as np
import pandas as pd
import pytest

from preqdag.services.dataset import Dataset
from preqdag.services.tabular import (
    CategoricalCpd,
    bayes_dirichlet_score,
    parent_config_index,
    permutation_averaged_next_step_loss,
    score_node,
    tabular_cpd_prequential_score,
    write_curve_csv,
    write_trace_csv,
)
from preqdag.utils.exceptions import ValidationException


def test_parent_config_index_is_mixed_radix() -> None:
    columns = np.array([[0, 0], [0, 2], [1, 0], [1, 2]])
    index, num_configs = parent_config_index(columns, [2, 3])
    assert num_configs == 6
    assert index.tolist() == [0, 2, 3, 5]


def test_parent_config_index_without_parents() -> None:
    index, num_configs = parent_config_index(None, [], n=4)
    assert num_configs == 1
    assert index.tolist() == [0, 0, 0, 0]


def test_predict_uses_dirichlet_smoothing() -> None:
    cpd = CategoricalCpd(num_values=3, num_configs=1, alpha=0.5)
    assert cpd.predict(0, 1) == pytest.approx(1 / 3)
    cpd.observe(0, 1).observe(0, 1).observe(0, 2)
    assert cpd.predict(0, 1) == pytest.approx(2.5 / 4.5)
    assert cpd.predictive(0).sum() == pytest.approx(1.0)
    assert cpd.total == 3


def test_fit_matches_repeated_observe() -> None:
    configs = np.array([0, 1, 1, 0, 1])
    values = np.array([2, 0, 0, 1, 2])
    bulk = CategoricalCpd(3, 2).fit(configs, values)
    stepwise = CategoricalCpd(3, 2)
    for l, k in zip(configs, values):
        stepwise.observe(int(l), int(k))
    np.testing.assert_array_equal(bulk.counts, stepwise.counts)


def test_cpd_rejects_out_of_range_indices() -> None:
    cpd = CategoricalCpd(2, 2)
    with pytest.raises(ValidationException):
        cpd.predict(2, 0)
    with pytest.raises(ValidationException):
        cpd.observe(0, 5)
    with pytest.raises(ValidationException):
        CategoricalCpd(2, 1, alpha=0.0)


def test_first_prediction_is_uniform() -> None:
    trace = tabular_cpd_prequential_score(np.array([3]), None, 5)
    assert trace.total == pytest.approx(math.log(1 / 5))


def test_prequential_matches_sequential_updates() -> None:
    column = np.array([0, 1, 1, 2, 1, 0])
    parents = np.array([[0], [1], [1], [0], [1], [1]])
    trace = tabular_cpd_prequential_score(column, parents, 3, [2], alpha=1.0)
    cpd = CategoricalCpd(3, 2, alpha=1.0)
    expected = []
    for k, (l,) in zip(column, parents):
        expected.append(math.log(cpd.predict(int(l), int(k))))
        cpd.observe(int(l), int(k))
    np.testing.assert_allclose(trace.log_probs, expected, rtol=0, atol=1e-12)


def test_prequential_score_equals_dirichlet_evidence() -> None:
    rng = np.random.default_rng(2024)
    for _ in range(200):
        num_parents = int(rng.integers(0, 3))
        card = int(rng.integers(2, 6))
        parent_cards = [int(c) for c in rng.integers(2, 6, size=num_parents)]
        n = int(rng.integers(1, 201))
        alpha = float(rng.choice([0.5, 1.0]))
        column = rng.integers(0, card, size=n)
        parents = np.column_stack([rng.integers(0, c, size=n) for c in parent_cards]) if parent_cards else None

        prequential = tabular_cpd_prequential_score(column, parents, card, parent_cards, alpha).total
        evidence = bayes_dirichlet_score(column, parents, card, parent_cards, alpha)
        assert abs(prequential - evidence) <= 1e-9 * abs(evidence) + 1e-9


def test_masked_rows_neither_scored_nor_counted() -> None:
    column = np.array([1, 1, 0, 1])
    mask = np.array([False, True, False, False])
    masked = tabular_cpd_prequential_score(column, None, 2, mask=mask)
    unmasked = tabular_cpd_prequential_score(column[~mask], None, 2)
    assert masked.log_probs[1] == 0.0
    assert not masked.scored[1]
    assert masked.total == pytest.approx(unmasked.total, abs=1e-12)


def test_fully_masked_column_scores_zero() -> None:
    column = np.array([0, 1, 2])
    trace = tabular_cpd_prequential_score(column, None, 3, mask=np.ones(3, dtype=bool))
    assert trace.total == 0.0


def test_child_values_out_of_range() -> None:
    with pytest.raises(ValidationException):
        tabular_cpd_prequential_score(np.array([0, 3]), None, 3)


def test_score_node_reads_dataset_mask(random_categorical) -> None:
    dataset = random_categorical(seed=3, mask_rate=0.2)
    trace = score_node(dataset, 2, [0, 1])
    np.testing.assert_array_equal(trace.scored, ~dataset.mask[:, 2])
    assert trace.total <= 0.0


def test_score_node_requires_categorical_data() -> None:
    dataset = Dataset(["A", "B"], np.zeros((4, 2)) + 0.5)
    with pytest.raises(ValidationException):
        score_node(dataset, 0, [1])


def test_permutation_curve_first_ordering_is_identity(random_categorical) -> None:
    dataset = random_categorical(seed=5, n=40)
    single = permutation_averaged_next_step_loss(dataset, 1, [0], num_permutations=1, rng_seed=0)
    trace = score_node(dataset, 1, [0])
    np.testing.assert_allclose(single.mean, trace.losses)
    np.testing.assert_array_equal(single.std, np.zeros(40))


def test_permutation_curve_statistics(random_categorical) -> None:
    dataset = random_categorical(seed=6, n=50)
    curve = permutation_averaged_next_step_loss(dataset, 2, [1], num_permutations=25, rng_seed=1)
    assert curve.num_permutations == 25
    assert curve.mean.shape == (50,)
    assert np.all(curve.std >= 0.0)
    # The first step always sees an empty history: the uniform prior predictive
    assert curve.mean[0] == pytest.approx(math.log(dataset.cardinalities[2]))
    assert curve.std[0] == pytest.approx(0.0, abs=1e-12)


def test_permuted_reorders_values_and_mask(random_categorical) -> None:
    dataset = random_categorical(seed=8, n=12, mask_rate=0.3)
    shuffled = dataset.permuted(np.arange(12)[::-1])
    np.testing.assert_array_equal(shuffled.values, dataset.values[::-1])
    np.testing.assert_array_equal(shuffled.mask, dataset.mask[::-1])
    assert shuffled.cardinalities == dataset.cardinalities


def test_total_is_invariant_to_row_order(random_categorical) -> None:
    rng = np.random.default_rng(9)
    for seed in range(10):
        dataset = random_categorical(seed=seed, n=60, mask_rate=0.1)
        total = score_node(dataset, 2, [0, 1]).total
        for _ in range(3):
            shuffled = dataset.permuted(rng.permutation(dataset.n))
            assert score_node(shuffled, 2, [0, 1]).total == pytest.approx(total, abs=1e-9)


def test_permutation_curves_agree_across_seeds(random_categorical) -> None:
    dataset = random_categorical(seed=10, n=100)
    runs = 400
    first = permutation_averaged_next_step_loss(dataset, 2, [0], num_permutations=runs, rng_seed=1)
    second = permutation_averaged_next_step_loss(dataset, 2, [0], num_permutations=runs, rng_seed=2)
    standard_error = np.sqrt((first.std ** 2 + second.std ** 2) / runs)
    assert np.all(np.abs(first.mean - second.mean) <= 6 * standard_error + 1e-9)
    assert not np.array_equal(first.mean, second.mean)


def test_trace_and_curve_csv(tmp_path, random_categorical) -> None:
    dataset = random_categorical(seed=7, n=10)
    trace = score_node(dataset, 0, [])
    write_trace_csv(tmp_path / "trace.csv", trace)
    frame = pd.read_csv(tmp_path / "trace.csv")
    assert list(frame.columns) == ["index", "i", "log_loss"]
    assert frame["i"].tolist() == list(range(1, 11))
    assert frame["log_loss"].sum() == pytest.approx(-trace.total)

    curves = {
        "-": permutation_averaged_next_step_loss(dataset, 0, [], num_permutations=3, rng_seed=0),
        "B": permutation_averaged_next_step_loss(dataset, 0, [1], num_permutations=3, rng_seed=0),
    }
    write_curve_csv(tmp_path / "curves.csv", curves)
    frame = pd.read_csv(tmp_path / "curves.csv")
    assert list(frame.columns) == ["parents", "i", "mean", "std"]
    assert len(frame) == 20
    assert set(frame["parents"]) == {"-", "B"}
