"""
Tabular CPD Service

Exact prequential scoring of categorical data with Dirichlet-smoothed
conditional probability tables, plus the closed-form Bayesian-Dirichlet
marginal likelihood the prequential score coincides with.

Parent configurations use a mixed-radix index whose most significant digit
is the lowest-numbered parent. All logarithms are natural (nats).
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import gammaln

from preqdag.services.dataset import Dataset
from preqdag.utils.exceptions import ValidationException
from preqdag.utils.io import PathLike, atomic_write_text

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.5


def parent_config_index(
    parent_columns: Optional[np.ndarray],
    parent_cardinalities: Sequence[int],
    n: Optional[int] = None,
) -> Tuple[np.ndarray, int]:
    """
    Encode parent value rows as configuration indices.

    Returns:
        (indices of shape (n,), number of configurations L)
    """
    cards = [int(c) for c in parent_cardinalities]
    if not cards:
        length = n if n is not None else (0 if parent_columns is None else len(parent_columns))
        return np.zeros(length, dtype=np.int64), 1
    columns = np.asarray(parent_columns, dtype=np.int64)
    if columns.ndim != 2 or columns.shape[1] != len(cards):
        raise ValidationException(
            f"parent columns must have shape (n, {len(cards)}), got {columns.shape}"
        )
    index = np.zeros(columns.shape[0], dtype=np.int64)
    for j, card in enumerate(cards):
        col = columns[:, j]
        if col.size and (col.min() < 0 or col.max() >= card):
            raise ValidationException(f"parent column {j} has values outside [0, {card})")
        index = index * card + col
    return index, int(np.prod(cards))


@dataclass
class CategoricalCpd:
    """
    Conditional probability table with Dirichlet(alpha) smoothing.

    ``counts[l, k]`` is the number of observed rows with parent configuration
    ``l`` and child value ``k``.
    """

    num_values: int
    num_configs: int
    alpha: float = DEFAULT_ALPHA
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.num_values < 1 or self.num_configs < 1:
            raise ValidationException("cardinality and configuration count must be positive")
        if self.alpha <= 0:
            raise ValidationException(f"alpha must be positive, got {self.alpha}")
        if self.counts is None:
            self.counts = np.zeros((self.num_configs, self.num_values), dtype=np.int64)

    @classmethod
    def for_parents(
        cls, cardinality: int, parent_cardinalities: Sequence[int], alpha: float = DEFAULT_ALPHA
    ) -> "CategoricalCpd":
        return cls(cardinality, int(np.prod([int(c) for c in parent_cardinalities])), alpha)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _check(self, l: int, k: int) -> None:
        if not 0 <= l < self.num_configs:
            raise ValidationException(f"parent configuration {l} outside [0, {self.num_configs})")
        if not 0 <= k < self.num_values:
            raise ValidationException(f"value {k} outside [0, {self.num_values})")

    def predict(self, l: int, k: int) -> float:
        """(N_kl + alpha) / sum_m (N_ml + alpha)"""
        self._check(l, k)
        row = self.counts[l]
        return float((row[k] + self.alpha) / (row.sum() + self.num_values * self.alpha))

    def predictive(self, l: int) -> np.ndarray:
        self._check(l, 0)
        row = self.counts[l] + self.alpha
        return row / row.sum()

    def observe(self, l: int, k: int) -> "CategoricalCpd":
        self._check(l, k)
        self.counts[l, k] += 1
        return self

    def fit(self, configs: np.ndarray, values: np.ndarray) -> "CategoricalCpd":
        """Observe many (configuration, value) rows at once"""
        configs = np.asarray(configs, dtype=np.int64)
        values = np.asarray(values, dtype=np.int64)
        if configs.size:
            if configs.min() < 0 or configs.max() >= self.num_configs:
                raise ValidationException("parent configuration out of range")
            if values.min() < 0 or values.max() >= self.num_values:
                raise ValidationException("value out of range")
            np.add.at(self.counts, (configs, values), 1)
        return self

    def log_predict_many(self, configs: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Log predictive probabilities under the current (frozen) counts"""
        configs = np.asarray(configs, dtype=np.int64)
        values = np.asarray(values, dtype=np.int64)
        numer = self.counts[configs, values] + self.alpha
        denom = self.counts[configs].sum(axis=1) + self.num_values * self.alpha
        return np.log(numer) - np.log(denom)


@dataclass
class PrequentialTrace:
    """Per-row log predictive probabilities; masked rows hold 0 and ``scored`` False"""

    log_probs: np.ndarray
    scored: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.log_probs))

    @property
    def losses(self) -> np.ndarray:
        """Next-step log-loss, -log p"""
        return -self.log_probs


def _occurrences_before(keys: np.ndarray) -> np.ndarray:
    """For each position, how many earlier positions hold the same key"""
    if keys.size == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    starts = np.empty(keys.size, dtype=bool)
    starts[0] = True
    starts[1:] = sorted_keys[1:] != sorted_keys[:-1]
    positions = np.arange(keys.size)
    group_start = np.maximum.accumulate(np.where(starts, positions, 0))
    ranks = np.empty(keys.size, dtype=np.int64)
    ranks[order] = positions - group_start
    return ranks


def _validate_column(column: np.ndarray, cardinality: int) -> np.ndarray:
    values = np.asarray(column, dtype=np.int64)
    if values.ndim != 1:
        raise ValidationException("child column must be one-dimensional")
    if values.size and (values.min() < 0 or values.max() >= cardinality):
        raise ValidationException(f"child values fall outside [0, {cardinality})")
    return values


def tabular_cpd_prequential_score(
    column: np.ndarray,
    parent_columns: Optional[np.ndarray],
    cardinality: int,
    parent_cardinalities: Sequence[int] = (),
    alpha: float = DEFAULT_ALPHA,
    mask: Optional[np.ndarray] = None,
) -> PrequentialTrace:
    """
    Prequential log-likelihood of one CPD.

    Rows are processed in order: each unmasked row is scored with the
    predictive of the counts so far and then observed. Masked rows neither
    contribute a loss nor update the counts.
    """
    if alpha <= 0:
        raise ValidationException(f"alpha must be positive, got {alpha}")
    values = _validate_column(column, cardinality)
    n = values.size
    configs, _ = parent_config_index(parent_columns, parent_cardinalities, n=n)
    if configs.size != n:
        raise ValidationException("parent columns and child column differ in length")
    scored = np.ones(n, dtype=bool) if mask is None else ~np.asarray(mask, dtype=bool)
    if scored.size != n:
        raise ValidationException("mask and child column differ in length")

    log_probs = np.zeros(n, dtype=np.float64)
    idx = np.flatnonzero(scored)
    if idx.size:
        k = values[idx]
        l = configs[idx]
        prior_pair = _occurrences_before(l * cardinality + k)
        prior_config = _occurrences_before(l)
        log_probs[idx] = np.log(prior_pair + alpha) - np.log(prior_config + cardinality * alpha)
    return PrequentialTrace(log_probs=log_probs, scored=scored)


def bayes_dirichlet_score(
    column: np.ndarray,
    parent_columns: Optional[np.ndarray],
    cardinality: int,
    parent_cardinalities: Sequence[int] = (),
    alpha: float = DEFAULT_ALPHA,
) -> float:
    """Closed-form Dirichlet-multinomial log evidence summed over parent configurations"""
    if alpha <= 0:
        raise ValidationException(f"alpha must be positive, got {alpha}")
    values = _validate_column(column, cardinality)
    if values.size == 0:
        return 0.0
    configs, _ = parent_config_index(parent_columns, parent_cardinalities, n=values.size)
    if configs.size != values.size:
        raise ValidationException("parent columns and child column differ in length")
    pairs, pair_counts = np.unique(configs * cardinality + values, return_counts=True)
    _, config_counts = np.unique(configs, return_counts=True)
    v_alpha = cardinality * alpha
    score = np.sum(gammaln(v_alpha) - gammaln(v_alpha + config_counts))
    score += np.sum(gammaln(alpha + pair_counts) - gammaln(alpha))
    return float(score)


def score_node(
    dataset: Dataset,
    child: int,
    parents: Sequence[int],
    alpha: float = DEFAULT_ALPHA,
) -> PrequentialTrace:
    """Prequential trace of ``child`` given ``parents`` under the dataset's mask"""
    if not dataset.is_categorical:
        raise ValidationException("tabular CPDs need categorical data")
    parents = list(parents)
    return tabular_cpd_prequential_score(
        dataset.column(child),
        dataset.columns(parents) if parents else None,
        dataset.cardinalities[child],
        [dataset.cardinalities[p] for p in parents],
        alpha=alpha,
        mask=dataset.mask[:, child],
    )


@dataclass
class NextStepLossCurve:
    """Index-wise mean and standard deviation of next-step log-loss"""

    mean: np.ndarray
    std: np.ndarray
    num_permutations: int


def permutation_averaged_next_step_loss(
    dataset: Dataset,
    child: int,
    parents: Sequence[int],
    alpha: float = DEFAULT_ALPHA,
    num_permutations: int = 1000,
    rng_seed=None,
) -> NextStepLossCurve:
    """
    Average the next-step log-loss curve over row permutations.

    The first ordering is the dataset's own; the remaining ones are drawn
    from ``rng_seed``. Masked rows contribute zero loss at their position.
    """
    if num_permutations < 1:
        raise ValidationException("num_permutations must be at least 1")
    rng = np.random.default_rng(rng_seed)
    mean = np.zeros(dataset.n)
    m2 = np.zeros(dataset.n)
    for r in range(num_permutations):
        shuffled = dataset if r == 0 else dataset.permuted(rng.permutation(dataset.n))
        trace = score_node(shuffled, child, parents, alpha)
        # Welford update
        losses = trace.losses
        delta = losses - mean
        mean += delta / (r + 1)
        m2 += delta * (losses - mean)
    return NextStepLossCurve(mean=mean, std=np.sqrt(m2 / num_permutations), num_permutations=num_permutations)


def write_trace_csv(path: PathLike, trace: PrequentialTrace, order: Optional[np.ndarray] = None) -> None:
    """Columns ``index,i,log_loss``: dataset row, 1-based step, -log p"""
    n = trace.log_probs.size
    index = np.arange(n) if order is None else np.asarray(order)
    frame = pd.DataFrame({"index": index, "i": np.arange(1, n + 1), "log_loss": trace.losses})
    atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g"))


def write_curve_csv(path: PathLike, curves: dict) -> None:
    """Columns ``parents,i,mean,std`` for permutation-averaged next-step curves"""
    frames = []
    for label, curve in curves.items():
        steps = np.arange(1, curve.mean.size + 1)
        frames.append(pd.DataFrame({"parents": label, "i": steps, "mean": curve.mean, "std": curve.std}))
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["parents", "i", "mean", "std"])
    atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g"))
