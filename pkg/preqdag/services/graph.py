"""
DAG Service

Directed acyclic graphs over D labelled nodes, stored as one parent bitmask
per node. Provides exhaustive enumeration, parent-set indexing, Markov
equivalence (CPDAG via v-structures and Meek rules R1-R4), structural
Hamming distance and GNP random graphs.
"""

import logging
from dataclasses import dataclass
from math import comb
from typing import FrozenSet, Iterator, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from preqdag.schemas.graph import DagModel
from preqdag.utils.exceptions import (
    CapacityException,
    InvariantViolationException,
    ValidationException,
)

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]

MAX_ENUMERATION_NODES = 6
ADJACENCY_ENUMERATION_MAX_NODES = 4


def _bits(mask: int) -> Tuple[int, ...]:
    return tuple(i for i in range(mask.bit_length()) if mask >> i & 1)


def _is_acyclic(parent_masks: Sequence[int]) -> bool:
    remaining = (1 << len(parent_masks)) - 1
    while remaining:
        ready = 0
        for v in _bits(remaining):
            if parent_masks[v] & remaining == 0:
                ready |= 1 << v
        if not ready:
            return False
        remaining &= ~ready
    return True


@dataclass(frozen=True)
class Dag:
    """
    Acyclic directed graph over nodes ``0 .. num_nodes-1``.

    ``parent_masks[v]`` has bit ``u`` set iff the graph contains ``u -> v``.
    """

    num_nodes: int
    parent_masks: Tuple[int, ...]

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ValidationException(f"a DAG needs at least one node, got {self.num_nodes}")
        if len(self.parent_masks) != self.num_nodes:
            raise ValidationException(
                f"expected {self.num_nodes} parent masks, got {len(self.parent_masks)}"
            )
        full = (1 << self.num_nodes) - 1
        for v, mask in enumerate(self.parent_masks):
            if mask < 0 or mask & ~full:
                raise ValidationException(f"parent mask of node {v} references unknown nodes")
            if mask >> v & 1:
                raise ValidationException(f"self-loop on node {v}")
        if not _is_acyclic(self.parent_masks):
            raise InvariantViolationException("graph contains a directed cycle")

    @classmethod
    def empty(cls, num_nodes: int) -> "Dag":
        return cls(num_nodes, (0,) * num_nodes)

    @classmethod
    def from_edges(cls, num_nodes: int, edges) -> "Dag":
        masks = [0] * num_nodes
        for u, v in edges:
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise ValidationException(f"edge ({u}, {v}) out of range for {num_nodes} nodes")
            masks[v] |= 1 << u
        return cls(num_nodes, tuple(masks))

    @property
    def edges(self) -> FrozenSet[Edge]:
        return frozenset((u, v) for v, mask in enumerate(self.parent_masks) for u in _bits(mask))

    @property
    def num_edges(self) -> int:
        return sum(bin(mask).count("1") for mask in self.parent_masks)

    def parents(self, v: int) -> Tuple[int, ...]:
        return _bits(self.parent_masks[v])

    def children(self, u: int) -> Tuple[int, ...]:
        return tuple(v for v, mask in enumerate(self.parent_masks) if mask >> u & 1)

    def in_degree(self, v: int) -> int:
        return bin(self.parent_masks[v]).count("1")

    def has_edge(self, u: int, v: int) -> bool:
        return bool(self.parent_masks[v] >> u & 1)

    def adjacent(self, u: int, v: int) -> bool:
        return self.has_edge(u, v) or self.has_edge(v, u)

    def sort_key(self) -> Tuple[Edge, ...]:
        """Serialization used for deterministic tie-breaking"""
        return tuple(sorted(self.edges))

    def edge_list(self) -> List[List[int]]:
        return [[u, v] for u, v in self.sort_key()]

    def with_edge(self, u: int, v: int) -> "Dag":
        masks = list(self.parent_masks)
        masks[v] |= 1 << u
        return Dag(self.num_nodes, tuple(masks))

    def without_edge(self, u: int, v: int) -> "Dag":
        masks = list(self.parent_masks)
        masks[v] &= ~(1 << u)
        return Dag(self.num_nodes, tuple(masks))

    def with_reversed_edge(self, u: int, v: int) -> "Dag":
        masks = list(self.parent_masks)
        masks[v] &= ~(1 << u)
        masks[u] |= 1 << v
        return Dag(self.num_nodes, tuple(masks))

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.num_nodes))
        graph.add_edges_from(self.sort_key())
        return graph


@dataclass(frozen=True)
class ParentSet:
    """A candidate parent set of one child node (bitmask semantics)"""

    child: int
    mask: int

    def __post_init__(self):
        if self.mask >> self.child & 1:
            raise ValidationException(f"node {self.child} cannot be its own parent")

    @property
    def parents(self) -> Tuple[int, ...]:
        return _bits(self.mask)

    @property
    def size(self) -> int:
        return bin(self.mask).count("1")


@dataclass(frozen=True)
class Cpdag:
    """Completed partially directed graph representing a Markov equivalence class"""

    num_nodes: int
    directed: FrozenSet[Edge]
    undirected: FrozenSet[Edge]  # stored as (min, max)


# Enumeration


def count_dags(num_nodes: int) -> int:
    """Number of labelled DAGs on ``num_nodes`` nodes (Robinson's recurrence)"""
    counts = [1]
    for n in range(1, num_nodes + 1):
        counts.append(
            sum(
                (-1) ** (k + 1) * comb(n, k) * 2 ** (k * (n - k)) * counts[n - k]
                for k in range(1, n + 1)
            )
        )
    return counts[num_nodes]


def _enumerate_by_adjacency(num_nodes: int) -> Iterator[Dag]:
    # Off-diagonal adjacency bits in increasing position order; iterating
    # over their subsets in integer order is lexicographic over the full
    # D*D bitmask (bit u*D+v means u -> v).
    positions = [(u, v) for u in range(num_nodes) for v in range(num_nodes) if u != v]
    for subset in range(1 << len(positions)):
        masks = [0] * num_nodes
        for bit, (u, v) in enumerate(positions):
            if subset >> bit & 1:
                masks[v] |= 1 << u
        if _is_acyclic(masks):
            yield Dag(num_nodes, tuple(masks))


def _closes_cycle(masks: Sequence[int], k: int, mask_k: int) -> bool:
    """Whether giving node k the parents ``mask_k`` closes a cycle among nodes 0..k"""
    targets = mask_k & ((1 << (k + 1)) - 1)
    if not targets:
        return False
    seen = 0
    frontier = 1 << k
    while frontier:
        w = frontier.bit_length() - 1
        frontier &= ~(1 << w)
        for v in range(k):
            if masks[v] >> w & 1 and not seen >> v & 1:
                if targets >> v & 1:
                    return True
                seen |= 1 << v
                frontier |= 1 << v
    return False


def _enumerate_by_parent_sets(num_nodes: int) -> Iterator[Dag]:
    choices = [
        [mask for mask in range(1 << num_nodes) if not mask >> v & 1] for v in range(num_nodes)
    ]
    masks = [0] * num_nodes

    def extend(k: int) -> Iterator[Dag]:
        if k == num_nodes:
            yield Dag(num_nodes, tuple(masks))
            return
        for mask in choices[k]:
            if _closes_cycle(masks, k, mask):
                continue
            masks[k] = mask
            yield from extend(k + 1)
        masks[k] = 0

    return extend(0)


def enumerate_dags(num_nodes: int) -> Iterator[Dag]:
    """
    Yield every labelled DAG on ``num_nodes`` nodes exactly once.

    Small graphs are enumerated lexicographically over the adjacency bitmask;
    from five nodes on, per-node parent-set choices are streamed with a
    prefix cycle check. The order is deterministic and each call returns a
    fresh stream.

    Raises:
        CapacityException: if ``num_nodes`` is outside ``[1, 6]``
    """
    if not 1 <= num_nodes <= MAX_ENUMERATION_NODES:
        raise CapacityException(
            f"exhaustive DAG enumeration supports 1..{MAX_ENUMERATION_NODES} nodes, got {num_nodes}"
        )
    if num_nodes <= ADJACENCY_ENUMERATION_MAX_NODES:
        return _enumerate_by_adjacency(num_nodes)
    return _enumerate_by_parent_sets(num_nodes)


def enumerate_parent_sets(num_nodes: int, max_parents: Optional[int] = None) -> List[ParentSet]:
    """
    All ``num_nodes * 2**(num_nodes-1)`` parent sets, ordered by child then mask.

    ``max_parents`` optionally drops sets larger than the in-degree cap.
    """
    if num_nodes < 1:
        raise ValidationException(f"num_nodes must be positive, got {num_nodes}")
    result = []
    for child in range(num_nodes):
        others = [u for u in range(num_nodes) if u != child]
        for subset in range(1 << len(others)):
            mask = sum(1 << u for bit, u in enumerate(others) if subset >> bit & 1)
            if max_parents is not None and bin(mask).count("1") > max_parents:
                continue
            result.append(ParentSet(child, mask))
    return result


# Orders and equivalence


def topological_order(g: Dag) -> List[int]:
    """Topological order with ties broken by ascending node index"""
    try:
        return list(nx.lexicographical_topological_sort(g.to_networkx()))
    except nx.NetworkXUnfeasible as exc:
        raise InvariantViolationException("cycle detected while sorting graph") from exc


def skeleton(g: Dag) -> FrozenSet[Edge]:
    return frozenset((min(u, v), max(u, v)) for u, v in g.edges)


def v_structures(g: Dag) -> FrozenSet[Tuple[int, int, int]]:
    """Colliders ``a -> c <- b`` with ``a < b`` non-adjacent, as ``(a, c, b)``"""
    found: Set[Tuple[int, int, int]] = set()
    for c in range(g.num_nodes):
        parents = g.parents(c)
        for i, a in enumerate(parents):
            for b in parents[i + 1:]:
                if not g.adjacent(a, b):
                    found.add((a, c, b))
    return frozenset(found)


class _Pdag:
    """Mutable partially directed graph used while applying Meek rules"""

    def __init__(self, num_nodes: int, undirected: Set[Edge]):
        self.num_nodes = num_nodes
        self.directed: Set[Edge] = set()
        self.undirected: Set[Edge] = set(undirected)

    def is_directed(self, u: int, v: int) -> bool:
        return (u, v) in self.directed

    def is_undirected(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self.undirected

    def adjacent(self, u: int, v: int) -> bool:
        return self.is_undirected(u, v) or self.is_directed(u, v) or self.is_directed(v, u)

    def orient(self, u: int, v: int) -> None:
        self.undirected.discard((min(u, v), max(u, v)))
        self.directed.add((u, v))

    def forces(self, a: int, b: int) -> bool:
        """Whether one of the Meek rules orients the undirected edge a - b as a -> b"""
        nodes = range(self.num_nodes)
        # R1: c -> a - b, c and b non-adjacent
        for c in nodes:
            if self.is_directed(c, a) and c != b and not self.adjacent(c, b):
                return True
        # R2: a -> c -> b
        for c in nodes:
            if self.is_directed(a, c) and self.is_directed(c, b):
                return True
        # R3: a - c -> b, a - d -> b, c and d non-adjacent
        spokes = [c for c in nodes if c != b and self.is_undirected(a, c) and self.is_directed(c, b)]
        for i, c in enumerate(spokes):
            for d in spokes[i + 1:]:
                if not self.adjacent(c, d):
                    return True
        # R4: a - d -> c -> b, a adjacent to c, b and d non-adjacent
        for d in nodes:
            if d == b or not self.is_undirected(a, d):
                continue
            for c in nodes:
                if (
                    c not in (a, b)
                    and self.is_directed(d, c)
                    and self.is_directed(c, b)
                    and self.adjacent(a, c)
                    and not self.adjacent(b, d)
                ):
                    return True
        return False


def to_cpdag(g: Dag) -> Cpdag:
    """
    CPDAG of ``g``: skeleton, v-structures oriented, then Meek rules R1-R4
    applied until no undirected edge can be oriented.
    """
    pdag = _Pdag(g.num_nodes, set(skeleton(g)))
    for a, c, b in sorted(v_structures(g)):
        pdag.orient(a, c)
        pdag.orient(b, c)
    changed = True
    while changed:
        changed = False
        for x, y in sorted(pdag.undirected):
            if not pdag.is_undirected(x, y):
                continue
            for a, b in ((x, y), (y, x)):
                if pdag.forces(a, b):
                    pdag.orient(a, b)
                    changed = True
                    break
    return Cpdag(g.num_nodes, frozenset(pdag.directed), frozenset(pdag.undirected))


def _check_same_size(g1: Dag, g2: Dag) -> None:
    if g1.num_nodes != g2.num_nodes:
        raise ValidationException(
            f"graphs have different node counts ({g1.num_nodes} vs {g2.num_nodes})"
        )


def same_mec(g1: Dag, g2: Dag) -> bool:
    _check_same_size(g1, g2)
    return to_cpdag(g1) == to_cpdag(g2)


def shd(g1: Dag, g2: Dag) -> int:
    """
    Structural Hamming distance.

    Every node pair whose state differs (absent, one orientation or the
    other) costs 1, so a reversed edge counts once.
    """
    _check_same_size(g1, g2)
    distance = 0
    for u in range(g1.num_nodes):
        for v in range(u + 1, g1.num_nodes):
            state1 = (g1.has_edge(u, v), g1.has_edge(v, u))
            state2 = (g2.has_edge(u, v), g2.has_edge(v, u))
            if state1 != state2:
                distance += 1
    return distance


# Random graphs


def random_gnp_dag(num_nodes: int, p_link: float, rng_seed=None) -> Dag:
    """
    GNP random DAG with a fixed node order.

    Every pair ``u < v`` independently receives the edge ``u -> v`` with
    probability ``p_link``; the adjacency matrix indexed ``[child, parent]`` is
    strictly lower-triangular, so the result is acyclic by construction.
    """
    if not 0.0 <= p_link <= 1.0:
        raise ValidationException(f"p_link must lie in [0, 1], got {p_link}")
    rng = np.random.default_rng(rng_seed)
    masks = [0] * num_nodes
    for v in range(num_nodes):
        for u in range(v):
            if rng.random() < p_link:
                masks[v] |= 1 << u
    return Dag(num_nodes, tuple(masks))


def thin_to_max_parents(g: Dag, max_parents: int, rng_seed=None) -> Dag:
    """Drop random parents until every in-degree is at most ``max_parents``"""
    rng = np.random.default_rng(rng_seed)
    masks = list(g.parent_masks)
    for v in range(g.num_nodes):
        parents = g.parents(v)
        if len(parents) > max_parents:
            kept = rng.choice(parents, size=max_parents, replace=False) if max_parents else []
            masks[v] = sum(1 << int(u) for u in kept)
    return Dag(g.num_nodes, tuple(masks))


# Text and JSON formats


def default_names(num_nodes: int) -> List[str]:
    if num_nodes <= 26:
        return [chr(ord("A") + i) for i in range(num_nodes)]
    return [f"X{i}" for i in range(num_nodes)]


def format_dag(g: Dag, names: Optional[Sequence[str]] = None) -> str:
    names = list(names) if names is not None else default_names(g.num_nodes)
    if not g.num_edges:
        return "(empty)"
    return ", ".join(f"{names[u]}->{names[v]}" for u, v in g.sort_key())


def dag_to_text(g: Dag, names: Optional[Sequence[str]] = None) -> str:
    """One ``child <- parent1,parent2`` line per node with a nonempty parent set"""
    names = list(names) if names is not None else default_names(g.num_nodes)
    lines = [
        f"{names[v]} <- {','.join(names[u] for u in g.parents(v))}"
        for v in range(g.num_nodes)
        if g.parent_masks[v]
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def dag_from_text(text: str, names: Sequence[str]) -> Dag:
    index = {name: i for i, name in enumerate(names)}

    def resolve(token: str) -> int:
        token = token.strip()
        if token in index:
            return index[token]
        if token.isdigit() and int(token) < len(names):
            return int(token)
        raise ValidationException(f"unknown node '{token}' in DAG text")

    edges = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "<-" not in line:
            raise ValidationException(f"line {line_no}: expected 'child <- parents'")
        child, parents = line.split("<-", 1)
        v = resolve(child)
        edges.extend((resolve(p), v) for p in parents.split(",") if p.strip())
    return Dag.from_edges(len(names), edges)


def dag_to_json(g: Dag, names: Optional[Sequence[str]] = None) -> dict:
    model = DagModel(
        num_nodes=g.num_nodes,
        edges=g.edge_list(),
        names=list(names) if names is not None else None,
    )
    return model.model_dump(exclude_none=True)


def dag_from_json(payload: dict) -> Dag:
    model = DagModel.model_validate(payload)
    return Dag.from_edges(model.num_nodes, [tuple(edge) for edge in model.edges])
