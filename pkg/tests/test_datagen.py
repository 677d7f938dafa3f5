import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import chi2

from preqdag.services.datagen import (
    CANCER_NAMES,
    COMPOUND_CATALOG,
    COMPOUND_FUNCTIONS,
    InterventionPolicy,
    Mechanism,
    Scm,
    apply_interventions,
    cpt_of,
    fixed_point_residual,
    gen_cancer_network,
    gen_compound_nonlinear,
    gen_fixed_point_mechanism,
    gen_sin_chain3,
    gen_sin_chain5,
    gen_star5,
    gen_tabular_chain,
    random_compound_spec,
    random_weighted_adjacency,
)
from preqdag.services.graph import Dag, to_cpdag
from preqdag.utils.exceptions import InvariantViolationException, ValidationException


def test_generators_are_seeded() -> None:
    np.testing.assert_array_equal(gen_star5(50, 3).values, gen_star5(50, 3).values)
    np.testing.assert_array_equal(gen_tabular_chain(3, 1.0, 50, 3).values, gen_tabular_chain(3, 1.0, 50, 3).values)
    assert not np.array_equal(gen_sin_chain3(50, 3).values, gen_sin_chain3(50, 4).values)


def test_sin_chain_follows_its_parent() -> None:
    sample = gen_sin_chain3(2000, rng_seed=0)
    a, b, c = sample.values.T
    assert np.all(np.abs(b) <= 1.0) and np.all(np.abs(c) <= 1.0)
    assert np.corrcoef(b, np.sin(a))[0, 1] > 0.9
    assert sample.dag == Dag.from_edges(3, [(0, 1), (1, 2)])
    assert not sample.dataset.is_categorical


def test_star5_structure_and_roots() -> None:
    sample = gen_star5(5000, rng_seed=1)
    assert sample.dag.edges == {(0, 2), (1, 2), (2, 3), (2, 4)}
    assert np.std(sample.values[:, 0]) == pytest.approx(1.0, abs=0.05)
    np.testing.assert_allclose(sample.values[:, 4], np.sin(3 * sample.values[:, 2] + sample.noise[:, 4]))


def test_sin_chain5_frequencies() -> None:
    sample = gen_sin_chain5(4, 100, rng_seed=2)
    np.testing.assert_allclose(sample.values[:, 3], np.sin(4 * sample.values[:, 2]) + sample.noise[:, 3])
    with pytest.raises(ValidationException):
        gen_sin_chain5(2, 100)


def test_fixed_point_mechanism_without_edges_returns_noise() -> None:
    for variant in ("a", "b"):
        sample = gen_fixed_point_mechanism(variant, np.zeros((4, 4)), 100, rng_seed=3)
        np.testing.assert_array_equal(sample.values, sample.noise)


@pytest.mark.parametrize("variant", ["a", "b"])
def test_fixed_point_mechanism_solves_the_fixed_point(variant: str) -> None:
    weights = random_weighted_adjacency(6, 0.5, rng_seed=4)
    sample = gen_fixed_point_mechanism(variant, weights, 300, rng_seed=5)
    scale = max(1.0, float(np.abs(sample.values).max()))
    assert fixed_point_residual(variant, weights, sample.values, sample.noise) < 1e-12 * scale
    assert sample.dag.edges == {(int(i), int(j)) for i, j in zip(*np.nonzero(weights))}


def test_weighted_adjacency_ranges() -> None:
    weights = random_weighted_adjacency(8, 0.6, rng_seed=6)
    nonzero = np.abs(weights[weights != 0])
    assert nonzero.size > 0
    assert np.all((nonzero >= 0.5) & (nonzero <= 2.0))
    assert np.all(np.diag(weights) == 0)


def test_cyclic_adjacency_is_rejected() -> None:
    weights = np.zeros((2, 2))
    weights[0, 1] = weights[1, 0] = 1.0
    with pytest.raises(InvariantViolationException):
        gen_fixed_point_mechanism("a", weights, 10)


def test_catalog_row_one_equations() -> None:
    sample = gen_compound_nonlinear(1, 500, rng_seed=7)
    x, e = sample.values, sample.noise
    a, b, c, d, out = x.T
    np.testing.assert_allclose(a, np.sin(30 * e[:, 0]))
    np.testing.assert_allclose(b, np.sin(2 * a) + e[:, 1])
    np.testing.assert_allclose(c, np.sin(b ** 3 - b + e[:, 2]))
    np.testing.assert_allclose(d, (c + e[:, 3]) ** 3)
    np.testing.assert_allclose(out, np.sign(a) / (np.abs(a) + 0.1) + e[:, 4])
    assert np.all(np.abs(out - e[:, 4]) <= 10.0)
    assert sample.dag.edges == {(0, 1), (1, 2), (2, 3), (0, 4)}


def test_catalog_rows_are_consistent() -> None:
    assert len(COMPOUND_CATALOG) == 20
    for row in COMPOUND_CATALOG:
        assert len(row) == 5
        for node, (name, parents) in enumerate(row):
            assert COMPOUND_FUNCTIONS[name][0] == len(parents)
            assert node not in parents
    sample = gen_compound_nonlinear(3, 50, rng_seed=0)
    assert sample.dag.edges == {(1, 2), (2, 3), (1, 3), (3, 4), (0, 4)}


@pytest.mark.parametrize("index", [0, 21])
def test_catalog_index_range(index: int) -> None:
    with pytest.raises(ValidationException):
        gen_compound_nonlinear(index, 10)


def test_random_compound_spec() -> None:
    spec = random_compound_spec(rng_seed=8)
    assert spec == random_compound_spec(rng_seed=8)
    for node, (name, parents) in enumerate(spec):
        assert len(parents) <= 3
        assert COMPOUND_FUNCTIONS[name][0] == len(parents)
        assert list(parents) == sorted(parents, reverse=True)
    sample = gen_compound_nonlinear(None, 100, rng_seed=8)
    assert np.all(np.isfinite(sample.values))


def test_mechanisms_must_match_the_dag() -> None:
    dag = Dag.from_edges(2, [(0, 1)])
    with pytest.raises(ValidationException):
        Scm(dag, [Mechanism((), lambda x, e: e), Mechanism((), lambda x, e: e)])


def test_cancer_network() -> None:
    sample = gen_cancer_network(1000, rng_seed=9)
    dataset = sample.dataset
    assert dataset.names == CANCER_NAMES
    assert dataset.cardinalities == (2, 2, 2, 2, 2)
    assert sample.dag.parents(2) == (0, 1)
    # The collider orients every edge, so the class has one member
    assert not to_cpdag(sample.dag).undirected
    assert cpt_of(sample, 2).shape == (4, 2)
    np.testing.assert_allclose(cpt_of(sample, 2).sum(axis=1), np.ones(4))


def test_cpt_of_rejects_continuous_nodes() -> None:
    with pytest.raises(ValidationException):
        cpt_of(gen_sin_chain3(10, 0), 0)


def test_chain_root_marginal_matches_its_cpt() -> None:
    n = 20_000
    sample = gen_tabular_chain(3, 1.0, n, rng_seed=10)
    p = cpt_of(sample, 0)[0]
    freq = np.bincount(sample.values[:, 0].astype(int), minlength=3) / n
    sigma = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(freq - p) <= 4 * sigma + 1e-12)


def g_test_conditional(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> float:
    """p-value of the G-test of x independent of y given z"""
    g_stat, dof = 0.0, 0
    for value in np.unique(z):
        rows = z == value
        table = np.zeros((x.max() + 1, y.max() + 1))
        np.add.at(table, (x[rows], y[rows]), 1)
        table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
        expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / table.sum()
        observed = table > 0
        g_stat += 2.0 * np.sum(table[observed] * np.log(table[observed] / expected[observed]))
        dof += (table.shape[0] - 1) * (table.shape[1] - 1)
    return float(chi2.sf(g_stat, dof)) if dof else 1.0


def test_chain_ends_are_conditionally_independent() -> None:
    passes = 0
    for seed in range(5):
        values = gen_tabular_chain(3, 1.0, 5000, rng_seed=seed).values.astype(int)
        passes += g_test_conditional(values[:, 0], values[:, 2], values[:, 1]) > 0.01
    assert passes >= 4


def test_zero_probability_changes_nothing() -> None:
    sample = gen_sin_chain3(200, rng_seed=11)
    result = apply_interventions(sample, InterventionPolicy(start=0, end=200, probability=0.0), rng_seed=0)
    np.testing.assert_array_equal(result.values, sample.values)
    assert not result.mask.any()


def test_interventions_hit_the_window() -> None:
    sample = gen_sin_chain3(4000, rng_seed=12)
    policy = InterventionPolicy(start=1000, end=3000, probability=0.3)
    result = apply_interventions(sample, policy, rng_seed=1)

    hit_rows = result.mask.any(axis=1)
    assert np.all(result.mask.sum(axis=1) <= 1)
    assert not hit_rows[:1000].any() and not hit_rows[3000:].any()
    assert abs(hit_rows.sum() - 600) <= 3 * np.sqrt(2000 * 0.3 * 0.7)
    np.testing.assert_array_equal(result.values[:1000], sample.values[:1000])
    np.testing.assert_array_equal(result.values[3000:], sample.values[3000:])
    np.testing.assert_array_equal(sample.mask, np.zeros_like(sample.mask))

    lo, hi = sample.values.min(axis=0), sample.values.max(axis=0)
    forced = result.values[result.mask]
    nodes = np.nonzero(result.mask)[1]
    assert np.all((forced >= lo[nodes]) & (forced <= hi[nodes]))


def test_intervened_rows_are_resimulated() -> None:
    sample = gen_sin_chain3(3000, rng_seed=13)
    result = apply_interventions(sample, InterventionPolicy(start=0, end=3000, probability=0.5), rng_seed=2)
    x, e, mask = result.values, result.noise, result.mask
    for node in range(3):
        rows = mask[:, node]
        assert rows.any()
        for upstream in range(node):
            np.testing.assert_array_equal(x[rows, upstream], sample.values[rows, upstream])
        for downstream in range(node + 1, 3):
            np.testing.assert_allclose(x[rows, downstream], np.sin(x[rows, downstream - 1] + e[rows, downstream]))


def test_categorical_interventions_stay_in_range() -> None:
    sample = gen_cancer_network(2000, rng_seed=14)
    result = apply_interventions(sample, InterventionPolicy(start=500, end=2000, probability=0.5), rng_seed=3)
    dataset = result.dataset
    assert dataset.mask.any()
    assert set(np.unique(dataset.values)) <= {0.0, 1.0}


def test_intervention_policy_validation() -> None:
    with pytest.raises(ValidationError):
        InterventionPolicy(start=10, end=5)
    with pytest.raises(ValidationError):
        InterventionPolicy(end=5, probability=1.5)
    with pytest.raises(ValidationException):
        apply_interventions(gen_sin_chain3(10, 0), InterventionPolicy(end=20))
