from itertools import product

import numpy as np
import pytest

from preqdag.services.graph import (
    Dag,
    count_dags,
    dag_from_json,
    dag_from_text,
    dag_to_json,
    dag_to_text,
    enumerate_dags,
    enumerate_parent_sets,
    random_gnp_dag,
    same_mec,
    shd,
    skeleton,
    thin_to_max_parents,
    to_cpdag,
    topological_order,
    v_structures,
)
from preqdag.utils.exceptions import (
    CapacityException,
    InvariantViolationException,
    ValidationException,
)


@pytest.mark.parametrize("num_nodes, expected", [(1, 1), (2, 3), (3, 25), (4, 543), (5, 29281)])
def test_enumeration_matches_robinson_counts(num_nodes: int, expected: int) -> None:
    assert count_dags(num_nodes) == expected
    dags = list(enumerate_dags(num_nodes))
    assert len(dags) == expected
    assert len(set(dags)) == expected


def test_enumeration_starts_with_empty_graph() -> None:
    assert next(iter(enumerate_dags(4))) == Dag.empty(4)
    assert list(enumerate_dags(1)) == [Dag.empty(1)]


def test_enumeration_rejects_large_graphs() -> None:
    with pytest.raises(CapacityException):
        enumerate_dags(7)
    with pytest.raises(CapacityException):
        enumerate_dags(0)


@pytest.mark.parametrize("num_nodes", [1, 2, 3, 4, 5])
def test_parent_set_count(num_nodes: int) -> None:
    sets = enumerate_parent_sets(num_nodes)
    assert len(sets) == num_nodes * 2 ** (num_nodes - 1)
    assert len({(ps.child, ps.mask) for ps in sets}) == len(sets)
    assert all(not ps.mask >> ps.child & 1 for ps in sets)


def test_parent_sets_ordered_by_child_then_mask() -> None:
    sets = enumerate_parent_sets(3)
    assert [(ps.child, ps.mask) for ps in sets] == sorted((ps.child, ps.mask) for ps in sets)
    assert [ps.parents for ps in sets if ps.child == 1] == [(), (0,), (2,), (0, 2)]


def test_parent_sets_respect_cap() -> None:
    sets = enumerate_parent_sets(4, max_parents=1)
    assert len(sets) == 4 * (1 + 3)
    assert all(ps.size <= 1 for ps in sets)


def test_cycle_is_rejected() -> None:
    with pytest.raises(InvariantViolationException):
        Dag.from_edges(3, [(0, 1), (1, 2), (2, 0)])


def test_out_of_range_edge_is_rejected() -> None:
    with pytest.raises(ValidationException):
        Dag.from_edges(2, [(0, 2)])


def test_topological_order_breaks_ties_by_index() -> None:
    g = Dag.from_edges(4, [(2, 0), (3, 1)])
    assert topological_order(g) == [2, 0, 3, 1]
    assert topological_order(Dag.empty(3)) == [0, 1, 2]


def test_chain_fork_and_reversed_chain_share_mec(chain_dag: Dag) -> None:
    reversed_chain = Dag.from_edges(3, [(2, 1), (1, 0)])
    fork = Dag.from_edges(3, [(1, 0), (1, 2)])
    collider = Dag.from_edges(3, [(0, 1), (2, 1)])
    assert same_mec(chain_dag, reversed_chain)
    assert same_mec(chain_dag, fork)
    assert not same_mec(chain_dag, collider)


def test_cpdag_of_collider_is_fully_directed() -> None:
    collider = Dag.from_edges(3, [(0, 1), (2, 1)])
    cpdag = to_cpdag(collider)
    assert cpdag.directed == {(0, 1), (2, 1)}
    assert not cpdag.undirected
    assert v_structures(collider) == {(0, 1, 2)}


def test_meek_rule_one_propagates_orientation() -> None:
    # 0 -> 2 <- 1, 2 -> 3, 2 -> 4: the collider forces both outgoing edges
    g = Dag.from_edges(5, [(0, 2), (1, 2), (2, 3), (2, 4)])
    cpdag = to_cpdag(g)
    assert cpdag.directed == g.edges
    assert not cpdag.undirected


def test_meek_rule_two_orients_shortcut() -> None:
    # 0 -> 1 <- 3 collider, 1 -> 2 by R1, then 0 - 2 oriented 0 -> 2 by R2
    g = Dag.from_edges(4, [(0, 1), (3, 1), (1, 2), (0, 2)])
    cpdag = to_cpdag(g)
    assert (0, 2) in cpdag.directed
    assert (1, 2) in cpdag.directed


def test_cpdag_of_complete_graph_is_undirected() -> None:
    g = Dag.from_edges(3, [(0, 1), (0, 2), (1, 2)])
    cpdag = to_cpdag(g)
    assert not cpdag.directed
    assert cpdag.undirected == {(0, 1), (0, 2), (1, 2)}


def test_mec_classes_partition_three_node_dags() -> None:
    dags = list(enumerate_dags(3))
    classes = {}
    for g in dags:
        classes.setdefault(to_cpdag(g), []).append(g)
    # 11 Markov equivalence classes on three labelled nodes
    assert len(classes) == 11
    assert sum(len(members) for members in classes.values()) == 25


def test_shd_counts_reversal_once(chain_dag: Dag) -> None:
    reversed_edge = Dag.from_edges(3, [(1, 0), (1, 2)])
    assert shd(chain_dag, chain_dag) == 0
    assert shd(chain_dag, reversed_edge) == 1
    assert shd(chain_dag, Dag.empty(3)) == 2
    assert shd(chain_dag, chain_dag.with_edge(0, 2)) == 1


def test_shd_rejects_node_count_mismatch(chain_dag: Dag) -> None:
    with pytest.raises(ValidationException):
        shd(chain_dag, Dag.empty(4))


def test_gnp_extremes() -> None:
    assert random_gnp_dag(5, 0.0, 1) == Dag.empty(5)
    full = random_gnp_dag(5, 1.0, 1)
    assert full.num_edges == 10
    assert all(u < v for u, v in full.edges)


def test_gnp_is_seeded() -> None:
    assert random_gnp_dag(6, 0.4, 9) == random_gnp_dag(6, 0.4, 9)
    with pytest.raises(ValidationException):
        random_gnp_dag(3, 1.5, 0)


def test_thinning_caps_in_degree() -> None:
    full = random_gnp_dag(6, 1.0, 0)
    thinned = thin_to_max_parents(full, 2, 3)
    assert max(thinned.in_degree(v) for v in range(6)) == 2
    assert thinned.edges <= full.edges
    assert thin_to_max_parents(full, 0, 3) == Dag.empty(6)


def test_edge_edits() -> None:
    g = Dag.from_edges(3, [(0, 1)])
    assert g.with_edge(1, 2).edges == {(0, 1), (1, 2)}
    assert g.without_edge(0, 1) == Dag.empty(3)
    assert g.with_reversed_edge(0, 1).edges == {(1, 0)}
    assert g.with_edge(0, 2).children(0) == (1, 2)
    with pytest.raises(InvariantViolationException):
        g.with_edge(1, 2).with_edge(2, 0)


def test_text_and_json_formats(chain_dag: Dag) -> None:
    names = ["A", "B", "C"]
    text = dag_to_text(chain_dag, names)
    assert text == "B <- A\nC <- B\n"
    assert dag_from_text(text, names) == chain_dag
    assert dag_from_text("# comment\nC <- A, B\n", names).edges == {(0, 2), (1, 2)}

    payload = dag_to_json(chain_dag, names)
    assert payload == {"num_nodes": 3, "edges": [[0, 1], [1, 2]], "names": names}
    assert dag_from_json(payload) == chain_dag


def test_text_format_rejects_unknown_nodes() -> None:
    with pytest.raises(ValidationException):
        dag_from_text("B <- Q\n", ["A", "B"])


def test_same_mec_is_an_equivalence_on_four_nodes() -> None:
    by_skeleton = {}
    for g in enumerate_dags(4):
        assert same_mec(g, g)
        by_skeleton.setdefault(skeleton(g), []).append(g)
    for group in by_skeleton.values():
        relation = np.array([[same_mec(a, b) for b in group] for a in group])
        np.testing.assert_array_equal(relation, relation.T)
        linked = relation.astype(int) @ relation.astype(int) > 0
        assert np.all(relation[linked])

    representatives = [group[0] for group in by_skeleton.values()]
    for a, b in product(representatives, repeat=2):
        assert same_mec(a, b) == (a is b)


@pytest.mark.parametrize("num_nodes", [3, 4])
def test_cpdag_equality_matches_skeleton_and_v_structures(num_nodes: int) -> None:
    dags = list(enumerate_dags(num_nodes))
    keys = {g: (skeleton(g), v_structures(g)) for g in dags}
    cpdags = {g: to_cpdag(g) for g in dags}
    for g, cpdag in cpdags.items():
        adjacencies = {(min(u, v), max(u, v)) for u, v in cpdag.directed} | set(cpdag.undirected)
        assert adjacencies == skeleton(g)
    for a, b in product(dags, repeat=2):
        assert (cpdags[a] == cpdags[b]) == (keys[a] == keys[b])


def test_shd_is_a_metric_on_three_nodes() -> None:
    dags = list(enumerate_dags(3))
    dist = np.array([[shd(a, b) for b in dags] for a in dags])
    np.testing.assert_array_equal(dist, dist.T)
    assert np.all(np.diag(dist) == 0)
    assert np.all(dist[~np.eye(len(dags), dtype=bool)] > 0)
    # dist[a, c] <= dist[a, b] + dist[b, c] for every triple
    assert np.all(dist[:, None, :] <= dist[:, :, None] + dist[None, :, :])
