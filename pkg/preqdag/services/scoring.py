"""
Scoring Service

Prequential plug-in scores per (node, parent set), cached in a table and
summed into DAG scores.

Rows are numbered 1..n. A split schedule s_1 < ... < s_K = n + 1 cuts the
rows into blocks [s_k, s_{k+1}); the CPD scoring block k is fitted on the
unmasked rows before s_k and evaluated on the unmasked rows of the block.
Rows before s_1 form a head block: the tabular model scores them exactly
step by step, the neural model with the uniform distribution over its bins.

Losses are code lengths in nats (``-log p``); a DAG's log-score is minus
the sum of its CPD totals.
"""

import logging
import math
import sys
import threading
from abc import ABC, abstractmethod
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError
from tqdm import tqdm

from preqdag.config import settings
from preqdag.schemas.base import ErrorCode
from preqdag.schemas.neural import MlpCpdConfig
from preqdag.schemas.scoring import BlockRecord, EntryRecord, ScoreTableRecord
from preqdag.services.dataset import Dataset
from preqdag.services.graph import Dag, ParentSet
from preqdag.services.neural import (
    DiscretizationGrid,
    TrainReport,
    derive_seed,
    eval_block,
    train_cpd,
)
from preqdag.services.tabular import DEFAULT_ALPHA, parent_config_index
from preqdag.utils.exceptions import (
    CacheException,
    CacheMissException,
    ConfigException,
    ScheduleException,
    TrainingException,
    ValidationException,
)
from preqdag.utils.io import PathLike, atomic_write_json, atomic_write_text, json_hash, read_json

logger = logging.getLogger(__name__)


def _parent_mask(parents: Iterable[int]) -> int:
    return sum(1 << int(p) for p in parents)


# Split schedules


@dataclass(frozen=True)
class SplitSchedule:
    """Strictly increasing split points; the last one is n + 1"""

    splits: Tuple[int, ...]

    def __post_init__(self):
        splits = tuple(int(s) for s in self.splits)
        object.__setattr__(self, "splits", splits)
        if len(splits) < 2:
            raise ScheduleException("a schedule needs at least two split points")
        if splits[0] < 1:
            raise ScheduleException(f"first split must be at least 1, got {splits[0]}")
        if any(b <= a for a, b in zip(splits, splits[1:])):
            raise ScheduleException(f"split points must increase strictly: {list(splits)}")

    @property
    def n(self) -> int:
        return self.splits[-1] - 1

    @property
    def first_split(self) -> int:
        return self.splits[0]

    @property
    def num_blocks(self) -> int:
        return len(self.splits) - 1

    @property
    def is_every_index(self) -> bool:
        return self.first_split == 1 and self.num_blocks == self.n

    def blocks(self) -> List[Tuple[int, int]]:
        """(s_k, s_{k+1}) pairs in 1-based row numbers"""
        return list(zip(self.splits[:-1], self.splits[1:]))

    def history_cutoffs(self) -> np.ndarray:
        """
        For each 0-based row j, the number of leading rows its predictor sees:
        ``j`` inside the head block, ``s_k - 1`` inside block k.
        """
        rows = np.arange(self.n)
        block = np.searchsorted(np.asarray(self.splits), rows + 1, side="right") - 1
        cutoffs = np.asarray(self.splits)[np.maximum(block, 0)] - 1
        return np.where(rows + 1 < self.first_split, rows, cutoffs)


def every_index_schedule(n: int) -> SplitSchedule:
    """Schedule with a split at every row: exact per-step scoring"""
    if n < 1:
        raise ScheduleException("cannot build a schedule for an empty dataset")
    return SplitSchedule(tuple(range(1, n + 2)))


def default_first_split(n: int) -> int:
    return max(1, min(n, max(settings.min_first_split, n // 1000)))


def make_schedule(n: int, num_blocks: int, first_split: Optional[int] = None) -> SplitSchedule:
    """
    Log-equidistant split points.

    s_k = round(s1 * (n / s1) ** ((k - 1) / (K - 1))) for k < K, and s_K = n + 1.

    Raises:
        ScheduleException: if the rounded points collapse to fewer than K
            distinct values
    """
    if num_blocks < 2:
        raise ScheduleException(f"block count must be at least 2, got {num_blocks}")
    if n < 1:
        raise ScheduleException("cannot build a schedule for an empty dataset")
    s1 = default_first_split(n) if first_split is None else int(first_split)
    if not 1 <= s1 <= n:
        raise ScheduleException(f"first split must lie in [1, {n}], got {s1}")

    points: List[int] = []
    for k in range(1, num_blocks):
        value = int(math.floor(s1 * (n / s1) ** ((k - 1) / (num_blocks - 1)) + 0.5))
        if not points or value > points[-1]:
            points.append(value)
    points.append(n + 1)
    if len(points) < num_blocks:
        raise ScheduleException(
            f"n={n} with first split {s1} yields only {len(points)} distinct split points; "
            f"reduce the block count below {num_blocks}"
        )
    return SplitSchedule(tuple(points))


# Score entries


@dataclass
class BlockScore:
    """Loss (nats) over rows [s_k, end)"""

    s_k: int
    end: int
    loss: float
    train_report: Optional[TrainReport] = None


@dataclass
class CpdScoreEntry:
    node: int
    parents: Tuple[int, ...]
    blocks: List[BlockScore]
    trace: Optional[np.ndarray] = None

    @property
    def total(self) -> float:
        return math.fsum(b.loss for b in self.blocks)

    @property
    def key(self) -> Tuple[int, int]:
        return self.node, _parent_mask(self.parents)

    def to_record(self) -> EntryRecord:
        return EntryRecord(
            node=self.node,
            parents=list(self.parents),
            blocks=[
                BlockRecord(
                    s_k=b.s_k,
                    end=b.end,
                    loss=b.loss,
                    train_report=b.train_report.to_record() if b.train_report else None,
                )
                for b in self.blocks
            ],
            total=self.total,
            trace=None if self.trace is None else self.trace.tolist(),
        )

    @classmethod
    def from_record(cls, record: EntryRecord) -> "CpdScoreEntry":
        blocks = [
            BlockScore(
                s_k=b.s_k,
                end=b.end,
                loss=b.loss,
                train_report=TrainReport(**b.train_report.model_dump()) if b.train_report else None,
            )
            for b in record.blocks
        ]
        entry = cls(
            node=record.node,
            parents=tuple(record.parents),
            blocks=blocks,
            trace=None if record.trace is None else np.asarray(record.trace, dtype=np.float64),
        )
        if abs(entry.total - record.total) > 1e-9 * max(1.0, abs(record.total)):
            raise CacheException(
                f"entry for node {record.node} with parents {record.parents} "
                f"has total {record.total} but its blocks sum to {entry.total}"
            )
        return entry


# CPD models


class CpdModel(ABC):
    """Scores one (node, parent set) pair over a split schedule"""

    kind: str = ""
    seed: int = 0

    @abstractmethod
    def config(self) -> Dict[str, Any]:
        """Parameters that determine the scores; hashed into the cache key"""

    @abstractmethod
    def check_dataset(self, dataset: Dataset) -> None:
        """Raise ConfigException if the model cannot score this kind of data"""

    @abstractmethod
    def score_entry(
        self,
        dataset: Dataset,
        child: int,
        parents: Sequence[int],
        schedule: SplitSchedule,
        keep_trace: bool = False,
    ) -> CpdScoreEntry:
        ...


def _counts_before(keys: np.ndarray, scored: np.ndarray, cutoffs: np.ndarray) -> np.ndarray:
    """For each row j, how many scored rows i < cutoffs[j] share its key"""
    n = keys.size
    idx = np.flatnonzero(scored)
    combined = np.sort(keys[idx] * (n + 1) + idx)
    base = keys * (n + 1)
    return np.searchsorted(combined, base + cutoffs, side="left") - np.searchsorted(combined, base, side="left")


def _block_ranges(schedule: SplitSchedule) -> List[Tuple[int, int]]:
    """Head block (when s_1 > 1) followed by the schedule's blocks"""
    ranges = [(1, schedule.first_split)] if schedule.first_split > 1 else []
    return ranges + schedule.blocks()


class TabularCpdModel(CpdModel):
    """Dirichlet-smoothed categorical CPD refitted at every split point"""

    kind = "tabular"

    def __init__(self, alpha: float = DEFAULT_ALPHA):
        if alpha <= 0:
            raise ConfigException(f"alpha must be positive, got {alpha}")
        self.alpha = alpha
        self.seed = 0

    def config(self) -> Dict[str, Any]:
        return {"kind": self.kind, "alpha": self.alpha}

    def check_dataset(self, dataset: Dataset) -> None:
        if not dataset.is_categorical:
            raise ConfigException("the tabular model needs categorical data")

    def row_log_probs(
        self, dataset: Dataset, child: int, parents: Sequence[int], schedule: SplitSchedule
    ) -> np.ndarray:
        """Log predictive probability of every row; masked rows hold 0"""
        parents = list(parents)
        card = dataset.cardinalities[child]
        values = dataset.column(child)
        configs, _ = parent_config_index(
            dataset.columns(parents) if parents else None,
            [dataset.cardinalities[p] for p in parents],
            n=dataset.n,
        )
        scored = ~dataset.mask[:, child]
        cutoffs = schedule.history_cutoffs()
        pair_counts = _counts_before(configs * card + values, scored, cutoffs)
        config_counts = _counts_before(configs, scored, cutoffs)
        log_probs = np.log(pair_counts + self.alpha) - np.log(config_counts + card * self.alpha)
        return np.where(scored, log_probs, 0.0)

    def score_entry(self, dataset, child, parents, schedule, keep_trace=False) -> CpdScoreEntry:
        losses = -self.row_log_probs(dataset, child, parents, schedule)
        # Exact per-step scoring is recorded as one block; the trace holds the steps.
        ranges = [(1, schedule.n + 1)] if schedule.is_every_index else _block_ranges(schedule)
        blocks = [BlockScore(s_k=start, end=end, loss=math.fsum(losses[start - 1:end - 1])) for start, end in ranges]
        return CpdScoreEntry(child, tuple(parents), blocks, losses if keep_trace else None)


class NeuralCpdModel(CpdModel):
    """Discretized MLP CPD trained from scratch on every block prefix"""

    kind = "neural"

    def __init__(self, config: Optional[MlpCpdConfig] = None, base_seed: int = 0):
        self.mlp_config = config or MlpCpdConfig()
        self.seed = int(base_seed)
        self.grid = DiscretizationGrid(self.mlp_config.num_bins)

    def config(self) -> Dict[str, Any]:
        return {"kind": self.kind, **self.mlp_config.model_dump()}

    def check_dataset(self, dataset: Dataset) -> None:
        if dataset.is_categorical:
            raise ConfigException("the neural model needs continuous data")

    def score_entry(self, dataset, child, parents, schedule, keep_trace=False) -> CpdScoreEntry:
        parents = list(parents)
        mask = _parent_mask(parents)
        scored = ~dataset.mask[:, child]
        targets = self.grid.bins(dataset.column(child))
        inputs = dataset.columns(parents) if parents else None
        uniform_loss = math.log(self.mlp_config.num_bins)

        blocks = []
        if schedule.first_split > 1:
            head = int(np.count_nonzero(scored[:schedule.first_split - 1]))
            blocks.append(BlockScore(s_k=1, end=schedule.first_split, loss=head * uniform_loss))

        for k, (start, end) in enumerate(schedule.blocks()):
            fit_rows = np.flatnonzero(scored[:start - 1])
            eval_rows = start - 1 + np.flatnonzero(scored[start - 1:end - 1])
            if eval_rows.size == 0:
                blocks.append(BlockScore(s_k=start, end=end, loss=0.0))
                continue
            seed = derive_seed(self.seed, child, mask, k)
            try:
                predictor, report = train_cpd(
                    None if inputs is None else inputs[fit_rows],
                    targets[fit_rows],
                    self.mlp_config,
                    seed,
                )
            except TrainingException as exc:
                logger.debug("node %d parents %s block %d: %s; scoring uniformly", child, parents, k, exc.message)
                blocks.append(BlockScore(s_k=start, end=end, loss=eval_rows.size * uniform_loss))
                continue
            log_probs = eval_block(
                predictor,
                None if inputs is None else inputs[eval_rows],
                targets[eval_rows],
            )
            blocks.append(BlockScore(s_k=start, end=end, loss=-math.fsum(log_probs), train_report=report))
            logger.info(
                "node %d parents %s block [%d, %d): lr=%g steps=%d loss=%.3f",
                child, parents, start, end, report.learning_rate, report.steps, blocks[-1].loss,
            )
        return CpdScoreEntry(child, tuple(parents), blocks)


def model_from_config(model_config: Dict[str, Any], seed: int = 0) -> CpdModel:
    """Rebuild a CPD model from the dictionary :meth:`CpdModel.config` returns"""
    params = dict(model_config)
    kind = params.pop("kind", None)
    if kind == "tabular":
        return TabularCpdModel(**params)
    if kind == "neural":
        try:
            return NeuralCpdModel(MlpCpdConfig(**params), base_seed=seed)
        except ValidationError as exc:
            raise ConfigException(f"invalid neural model configuration: {exc}") from exc
    raise ConfigException(f"unknown model kind '{kind}'")


def score_cpd_blocks(
    dataset: Dataset,
    child: int,
    parents: Sequence[int],
    schedule: SplitSchedule,
    model: CpdModel,
    keep_trace: bool = False,
) -> CpdScoreEntry:
    """Score one CPD over every block of ``schedule``"""
    if schedule.n != dataset.n:
        raise ValidationException(f"schedule covers {schedule.n} rows but the dataset has {dataset.n}")
    if not 0 <= child < dataset.num_nodes:
        raise ValidationException(f"node {child} outside [0, {dataset.num_nodes})")
    if child in parents or any(not 0 <= p < dataset.num_nodes for p in parents):
        raise ValidationException(f"invalid parent set {list(parents)} for node {child}")
    model.check_dataset(dataset)
    return model.score_entry(dataset, child, sorted(parents), schedule, keep_trace)


# Score table


class CpdScoreTable:
    """
    Cache of CPD score entries for one (dataset, schedule, model, seed).

    Writers may complete entries concurrently; the first entry stored under a
    key is kept.
    """

    def __init__(
        self,
        num_nodes: int,
        schedule: SplitSchedule,
        model_config: Dict[str, Any],
        dataset_hash: str,
        seed: int = 0,
    ):
        self.num_nodes = num_nodes
        self.schedule = schedule
        self.model_config = dict(model_config)
        self.dataset_hash = dataset_hash
        self.seed = int(seed)
        self._entries: Dict[Tuple[int, int], CpdScoreEntry] = {}
        self._lock = threading.Lock()

    @classmethod
    def for_dataset(cls, dataset: Dataset, schedule: SplitSchedule, model: CpdModel) -> "CpdScoreTable":
        return cls(dataset.num_nodes, schedule, model.config(), dataset.content_hash(), model.seed)

    @property
    def config_hash(self) -> str:
        return json_hash(
            {
                "dataset": self.dataset_hash,
                "schedule": list(self.schedule.splits),
                "model": self.model_config,
                "seed": self.seed,
            }
        )

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: Tuple[int, Iterable[int]]) -> bool:
        node, parents = key
        return (node, _parent_mask(parents)) in self._entries

    def put(self, entry: CpdScoreEntry) -> CpdScoreEntry:
        with self._lock:
            return self._entries.setdefault(entry.key, entry)

    def get(self, node: int, parents: Iterable[int]) -> CpdScoreEntry:
        entry = self._entries.get((node, _parent_mask(parents)))
        if entry is None:
            raise CacheMissException(node, sorted(parents))
        return entry

    def local_score(self, node: int, parents: Iterable[int]) -> float:
        """Log-likelihood contribution of one CPD"""
        return -self.get(node, parents).total

    def entries(self) -> List[CpdScoreEntry]:
        return [self._entries[k] for k in sorted(self._entries)]

    def missing(self, parent_sets: Iterable[ParentSet]) -> List[ParentSet]:
        return [ps for ps in parent_sets if (ps.child, ps.mask) not in self._entries]

    def to_record(self) -> ScoreTableRecord:
        return ScoreTableRecord(
            dataset_hash=self.dataset_hash,
            num_nodes=self.num_nodes,
            config_hash=self.config_hash,
            schedule=list(self.schedule.splits),
            model=self.model_config,
            seed=self.seed,
            entries=[e.to_record() for e in self.entries()],
        )

    @classmethod
    def from_record(cls, record: ScoreTableRecord) -> "CpdScoreTable":
        table = cls(record.num_nodes, SplitSchedule(tuple(record.schedule)), record.model, record.dataset_hash, record.seed)
        if table.config_hash != record.config_hash:
            raise CacheException(
                "score table configuration hash does not match its contents",
                code=ErrorCode.CACHE_MISMATCH,
            )
        for entry_record in record.entries:
            table.put(CpdScoreEntry.from_record(entry_record))
        return table

    def save(self, path: PathLike) -> None:
        with self._lock:
            record = self.to_record()
        atomic_write_json(path, record.model_dump(mode="json"))

    @classmethod
    def load(cls, path: PathLike) -> "CpdScoreTable":
        try:
            record = ScoreTableRecord(**read_json(path))
        except (OSError, ValueError, TypeError) as exc:
            raise CacheException(f"cannot read score table '{path}': {exc}") from exc
        return cls.from_record(record)

    def check_compatible(self, dataset_hash: str, config_hash: str) -> None:
        if self.dataset_hash != dataset_hash:
            raise CacheException(
                "score table was built from a different dataset; remove it or pick another cache file",
                code=ErrorCode.CACHE_MISMATCH,
            )
        if self.config_hash != config_hash:
            raise CacheException(
                "score table was built with a different schedule, model or seed",
                code=ErrorCode.CACHE_MISMATCH,
            )


def _score_job(
    dataset: Dataset,
    parent_set: ParentSet,
    schedule: SplitSchedule,
    model: CpdModel,
    keep_trace: bool,
) -> CpdScoreEntry:
    return score_cpd_blocks(dataset, parent_set.child, parent_set.parents, schedule, model, keep_trace)


def _progress(total: int, desc: str) -> tqdm:
    return tqdm(total=total, desc=desc, unit="cpd", disable=not sys.stderr.isatty())


def build_score_table(
    dataset: Dataset,
    parent_sets: Sequence[ParentSet],
    schedule: SplitSchedule,
    model: CpdModel,
    table: Optional[CpdScoreTable] = None,
    workers: int = 1,
    keep_trace: bool = False,
    checkpoint_path: Optional[PathLike] = None,
) -> CpdScoreTable:
    """
    Compute every missing entry of ``parent_sets`` and return the table.

    Entries already in ``table`` are not recomputed. With ``checkpoint_path``
    the table is saved after each completed entry so an interrupted sweep
    resumes where it stopped.
    """
    model.check_dataset(dataset)
    if table is None:
        table = CpdScoreTable.for_dataset(dataset, schedule, model)
    else:
        expected = CpdScoreTable.for_dataset(dataset, schedule, model)
        table.check_compatible(expected.dataset_hash, expected.config_hash)

    todo = table.missing(parent_sets)
    logger.info("%d of %d CPD entries to compute", len(todo), len(parent_sets))
    if not todo:
        return table

    def complete(entry: CpdScoreEntry) -> None:
        table.put(entry)
        logger.info("node %d parents %s: total %.4f nats", entry.node, list(entry.parents), entry.total)
        if checkpoint_path is not None:
            table.save(checkpoint_path)

    with _progress(len(todo), f"{model.kind} CPDs") as bar:
        if workers <= 1 or len(todo) == 1:
            for ps in todo:
                complete(_score_job(dataset, ps, schedule, model, keep_trace))
                bar.update()
        else:
            with ProcessPoolExecutor(max_workers=min(workers, len(todo))) as pool:
                futures = [pool.submit(_score_job, dataset, ps, schedule, model, keep_trace) for ps in todo]
                for future in as_completed(futures):
                    complete(future.result())
                    bar.update()
    return table


class LazyScorer:
    """Local scores computed on first request and stored in a table"""

    def __init__(
        self,
        dataset: Dataset,
        schedule: SplitSchedule,
        model: CpdModel,
        table: Optional[CpdScoreTable] = None,
        keep_trace: bool = False,
    ):
        model.check_dataset(dataset)
        self.dataset = dataset
        self.keep_trace = keep_trace
        self.schedule = schedule
        self.model = model
        self.table = table or CpdScoreTable.for_dataset(dataset, schedule, model)

    @property
    def num_nodes(self) -> int:
        return self.dataset.num_nodes

    def local_score(self, node: int, parents: Iterable[int]) -> float:
        parents = sorted(parents)
        if (node, parents) not in self.table:
            self.table.put(
                score_cpd_blocks(self.dataset, node, parents, self.schedule, self.model, self.keep_trace)
            )
        return self.table.local_score(node, parents)


# DAG scores


@dataclass(frozen=True)
class DagScore:
    dag: Dag
    log_score: float


def score_dag(table: CpdScoreTable, dag: Dag) -> DagScore:
    """Sum of cached CPD log-likelihoods; raises CacheMissException on a gap"""
    if dag.num_nodes != table.num_nodes:
        raise ValidationException(f"DAG has {dag.num_nodes} nodes but the table covers {table.num_nodes}")
    return DagScore(dag, math.fsum(table.local_score(d, dag.parents(d)) for d in range(dag.num_nodes)))


@dataclass
class ExcessCurve:
    """Cumulative excess loss of ``dag`` over the reference at row indices ``steps``"""

    dag: Dag
    steps: np.ndarray
    excess: np.ndarray = field(repr=False)

    @property
    def final(self) -> float:
        return float(self.excess[-1]) if self.excess.size else 0.0


def _dag_losses(table: CpdScoreTable, dag: Dag, per_step: bool) -> np.ndarray:
    entries = [table.get(d, dag.parents(d)) for d in range(dag.num_nodes)]
    if per_step:
        return np.sum([e.trace for e in entries], axis=0)
    return np.sum([[b.loss for b in e.blocks] for e in entries], axis=0)


def excess_loss_curves(table: CpdScoreTable, dags: Sequence[Dag], reference: Dag) -> List[ExcessCurve]:
    """
    Cumulative (loss_dag - loss_reference) for each DAG.

    Per-step when every involved entry carries a trace, otherwise at block
    boundaries (the last row of each block).
    """
    involved = [table.get(d, g.parents(d)) for g in [reference, *dags] for d in range(g.num_nodes)]
    with_trace = [e.trace is not None for e in involved]
    if all(with_trace):
        per_step = True
        steps = np.arange(1, table.schedule.n + 1)
    elif not any(with_trace):
        per_step = False
        steps = np.asarray([b.end - 1 for b in involved[0].blocks])
    else:
        raise ValidationException("cannot mix per-step traces with block-level scores in one curve set")

    ref_losses = _dag_losses(table, reference, per_step)
    return [ExcessCurve(g, steps, np.cumsum(_dag_losses(table, g, per_step) - ref_losses)) for g in dags]


def write_excess_csv(path: PathLike, curves: Sequence[ExcessCurve], dag_ids: Optional[Sequence[int]] = None) -> None:
    """Columns ``dag_id,i,excess_nats``"""
    ids = list(range(len(curves))) if dag_ids is None else list(dag_ids)
    frames = [
        pd.DataFrame({"dag_id": dag_id, "i": curve.steps, "excess_nats": curve.excess})
        for dag_id, curve in zip(ids, curves)
    ]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["dag_id", "i", "excess_nats"])
    atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g"))
