"""
Search Service

Structure selection over cached CPD scores: exhaustive ranking for small
graphs, best-improvement hill climbing under an in-degree cap, and
posterior-weighted summaries over the structures a search visited.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Protocol, Sequence, Set, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from preqdag.config import settings
from preqdag.services.graph import (
    Dag,
    enumerate_dags,
    random_gnp_dag,
    shd,
    thin_to_max_parents,
)
from preqdag.services.scoring import CpdScoreTable, score_dag
from preqdag.utils.exceptions import (
    CapacityException,
    InvariantViolationException,
    ValidationException,
)

logger = logging.getLogger(__name__)

MAX_EXHAUSTIVE_NODES = 5

Move = Tuple[str, int, int]


class LocalScorer(Protocol):
    num_nodes: int

    def local_score(self, node: int, parents: Iterable[int]) -> float:
        ...


# Ranking


@dataclass(frozen=True)
class RankedEntry:
    dag: Dag
    score_mean: float
    score_std: float
    scores: Tuple[float, ...] = ()


@dataclass
class RankedStructures:
    """DAGs sorted by mean log-score, best first; ties broken by edge list"""

    entries: List[RankedEntry]

    def __post_init__(self):
        self.entries = sorted(self.entries, key=lambda e: (-e.score_mean, e.dag.sort_key()))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[RankedEntry]:
        return iter(self.entries)

    def __getitem__(self, index: int) -> RankedEntry:
        return self.entries[index]

    @property
    def best(self) -> RankedEntry:
        return self.entries[0]

    def dags(self) -> List[Dag]:
        return [e.dag for e in self.entries]

    def rank_of(self, dag: Dag) -> int:
        for rank, entry in enumerate(self.entries):
            if entry.dag == dag:
                return rank
        raise ValidationException("DAG is not part of this ranking")


def _as_tables(tables: Union[CpdScoreTable, Sequence[CpdScoreTable]]) -> List[CpdScoreTable]:
    tables = [tables] if isinstance(tables, CpdScoreTable) else list(tables)
    if not tables:
        raise ValidationException("at least one score table is required")
    return tables


def rank_structures(
    tables: Union[CpdScoreTable, Sequence[CpdScoreTable]],
    dags: Iterable[Dag],
) -> RankedStructures:
    """Score every DAG in every replicate table; mean and population std per DAG"""
    tables = _as_tables(tables)
    entries = []
    for dag in dags:
        scores = tuple(score_dag(table, dag).log_score for table in tables)
        entries.append(RankedEntry(dag, float(np.mean(scores)), float(np.std(scores)), scores))
    return RankedStructures(entries)


def exhaustive_search(
    tables: Union[CpdScoreTable, Sequence[CpdScoreTable]],
    num_nodes: int,
) -> RankedStructures:
    if num_nodes > MAX_EXHAUSTIVE_NODES:
        raise CapacityException(
            f"exhaustive search supports at most {MAX_EXHAUSTIVE_NODES} nodes, got {num_nodes}; "
            "use hill climbing"
        )
    ranked = rank_structures(tables, enumerate_dags(num_nodes))
    logger.info("Ranked %d DAGs; best log-score %.4f", len(ranked), ranked.best.score_mean)
    return ranked


# Hill climbing


class MeanScorer:
    """Average of several scorers' local scores (one per replicate seed)"""

    def __init__(self, scorers: Sequence[LocalScorer]):
        if not scorers:
            raise ValidationException("at least one scorer is required")
        self.scorers = list(scorers)
        self.num_nodes = self.scorers[0].num_nodes

    def local_score(self, node: int, parents: Iterable[int]) -> float:
        parents = tuple(parents)
        return math.fsum(s.local_score(node, parents) for s in self.scorers) / len(self.scorers)


@dataclass
class ClimbRun:
    """One climb: final DAG, incumbent score after every accepted move and all DAGs evaluated"""

    final: Dag
    trajectory: List[float]
    moves: List[Move] = field(default_factory=list)
    visited: Set[Dag] = field(default_factory=set)

    @property
    def score(self) -> float:
        return self.trajectory[-1]


class _DagScores:
    def __init__(self, scorer: LocalScorer):
        self.scorer = scorer
        self.cache: Dict[Dag, float] = {}

    def __call__(self, dag: Dag) -> float:
        if dag not in self.cache:
            self.cache[dag] = math.fsum(
                self.scorer.local_score(d, dag.parents(d)) for d in range(dag.num_nodes)
            )
        return self.cache[dag]


def legal_moves(dag: Dag, max_parents: Optional[int] = None) -> Iterator[Tuple[Move, Dag]]:
    """Single-edge additions, deletions and reversals that keep the graph a DAG under the cap"""
    cap = dag.num_nodes if max_parents is None else max_parents
    for u in range(dag.num_nodes):
        for v in range(dag.num_nodes):
            if u == v:
                continue
            try:
                if dag.has_edge(u, v):
                    yield ("delete", u, v), dag.without_edge(u, v)
                    if dag.in_degree(u) < cap:
                        yield ("reverse", u, v), dag.with_reversed_edge(u, v)
                elif not dag.has_edge(v, u) and dag.in_degree(v) < cap:
                    yield ("add", u, v), dag.with_edge(u, v)
            except InvariantViolationException:
                continue


def climb(scorer: LocalScorer, start: Dag, max_parents: Optional[int] = None, tol: float = 1e-9) -> ClimbRun:
    """
    Best-improvement hill climbing from ``start``.

    Each iteration scans every legal move and applies the one with the
    largest gain; equal gains go to the lexicographically smallest move.
    Stops when no move improves the score by more than ``tol``.
    """
    scores = _DagScores(scorer)
    current = start
    run = ClimbRun(final=start, trajectory=[scores(start)], visited={start})
    while True:
        best: Optional[Tuple[float, Move, Dag]] = None
        for move, candidate in legal_moves(current, max_parents):
            run.visited.add(candidate)
            gain = scores(candidate) - scores(current)
            if best is None or gain > best[0] or (gain == best[0] and move < best[1]):
                best = (gain, move, candidate)
        if best is None or best[0] <= tol:
            break
        current = best[2]
        run.moves.append(best[1])
        run.trajectory.append(scores(current))
    run.final = current
    return run


def start_dags(
    num_nodes: int,
    restarts: int,
    max_parents: Optional[int] = None,
    rng_seed=None,
    p_link: Optional[float] = None,
) -> List[Dag]:
    """Empty DAG followed by ``restarts - 1`` GNP DAGs thinned to the cap"""
    p_link = settings.gnp_link_probability if p_link is None else p_link
    starts = [Dag.empty(num_nodes)]
    for child_seed in np.random.SeedSequence(rng_seed).spawn(max(restarts - 1, 0)):
        gnp_seed, thin_seed = child_seed.spawn(2)
        dag = random_gnp_dag(num_nodes, p_link, gnp_seed)
        if max_parents is not None:
            dag = thin_to_max_parents(dag, max_parents, thin_seed)
        starts.append(dag)
    return starts


def hill_climb(
    scorer: LocalScorer,
    num_nodes: int,
    max_parents: Optional[int] = None,
    restarts: int = 1,
    rng_seed=None,
    p_link: Optional[float] = None,
) -> Tuple[RankedStructures, Set[Dag]]:
    """
    Hill climb from every start DAG and rank everything visited.

    Raises:
        CacheMissException: if a table-backed scorer lacks a needed entry
    """
    if max_parents is not None and max_parents < 0:
        raise ValidationException(f"max_parents must be non-negative, got {max_parents}")
    if restarts < 1:
        raise ValidationException(f"restarts must be at least 1, got {restarts}")
    scores = _DagScores(scorer)
    visited: Set[Dag] = set()
    for index, start in enumerate(start_dags(num_nodes, restarts, max_parents, rng_seed, p_link)):
        run = climb(scorer, start, max_parents)
        visited |= run.visited
        logger.info(
            "restart %d: %d moves, log-score %.4f -> %.4f",
            index, len(run.moves), run.trajectory[0], run.score,
        )
    ranked = RankedStructures([RankedEntry(dag, scores(dag), 0.0, (scores(dag),)) for dag in visited])
    return ranked, visited


# Posterior over visited structures


@dataclass
class PosteriorApproximation:
    """Normalized exp(log_score - max) weights over a set of DAGs"""

    support: List[Dag]
    log_scores: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_scores(cls, scored: Iterable[Tuple[Dag, float]]) -> "PosteriorApproximation":
        pairs = list(scored)
        if not pairs:
            raise ValidationException("a posterior needs at least one DAG")
        support = [dag for dag, _ in pairs]
        log_scores = np.asarray([s for _, s in pairs], dtype=np.float64)
        weights = np.exp(log_scores - logsumexp(log_scores))
        return cls(support, log_scores, weights / weights.sum())

    @classmethod
    def from_ranking(cls, ranked: RankedStructures) -> "PosteriorApproximation":
        return cls.from_scores((e.dag, e.score_mean) for e in ranked)

    def weight_of(self, dag: Dag) -> float:
        return float(sum(w for g, w in zip(self.support, self.weights) if g == dag))

    def reported(self, threshold: float = 1e-12) -> List[Tuple[Dag, float]]:
        """Support members whose weight is at least ``threshold`` times the largest"""
        cutoff = threshold * float(self.weights.max())
        return [(g, float(w)) for g, w in zip(self.support, self.weights) if w >= cutoff]


def posterior_metrics(post: PosteriorApproximation, reference: Dag) -> Tuple[float, float]:
    """(posterior-weighted SHD to ``reference``, expected number of edges)"""
    distances = np.asarray([shd(g, reference) for g in post.support], dtype=np.float64)
    links = np.asarray([g.num_edges for g in post.support], dtype=np.float64)
    return float(post.weights @ distances), float(post.weights @ links)
