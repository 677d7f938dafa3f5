"""
Data Generation Service

Seeded structural causal models for synthetic experiments: Dirichlet
categorical networks, sinusoidal chains and stars, fixed-point mechanisms
over weighted adjacencies, the 20-row compound-function catalog with a
random mode, and interventional sample injection with do-semantics.

Every model keeps the exogenous noise of each sample, so rows can be
re-simulated exactly after a node has been overwritten.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from preqdag.services.dataset import Dataset
from preqdag.services.graph import Dag, default_names, random_gnp_dag, topological_order
from preqdag.services.tabular import parent_config_index
from preqdag.utils.exceptions import DataException, InvariantViolationException, ValidationException

logger = logging.getLogger(__name__)

MechanismFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

COMPOUND_NOISE_STD = 0.1
COMPOUND_MAX_IN_DEGREE = 3


@dataclass(frozen=True)
class Mechanism:
    """
    Structural equation of one node.

    ``fn(parent_values, noise)`` receives an (n, len(parents)) array ordered
    like ``parents`` and this node's noise column.
    """

    parents: Tuple[int, ...]
    fn: MechanismFn
    noise_std: float = 0.1
    noise_kind: Literal["gaussian", "uniform"] = "gaussian"
    label: str = ""

    def draw_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.noise_kind == "uniform":
            return rng.random(n)
        return rng.normal(0.0, self.noise_std, size=n)


@dataclass
class Scm:
    dag: Dag
    mechanisms: List[Mechanism]
    names: Tuple[str, ...] = ()
    cardinalities: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if len(self.mechanisms) != self.dag.num_nodes:
            raise ValidationException("one mechanism per node is required")
        for d, mech in enumerate(self.mechanisms):
            if tuple(sorted(mech.parents)) != self.dag.parents(d):
                raise ValidationException(
                    f"mechanism of node {d} reads {sorted(mech.parents)} but its parents are {list(self.dag.parents(d))}"
                )
        self.names = tuple(self.names) or tuple(default_names(self.dag.num_nodes))
        self.order = topological_order(self.dag)

    @property
    def num_nodes(self) -> int:
        return self.dag.num_nodes

    def draw_noise(self, n: int, rng_seed=None) -> np.ndarray:
        rng = np.random.default_rng(rng_seed)
        noise = np.empty((n, self.num_nodes))
        for d, mech in enumerate(self.mechanisms):
            noise[:, d] = mech.draw_noise(rng, n)
        return noise

    def simulate(self, noise: np.ndarray, overrides: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Evaluate the mechanisms in topological order.

        Non-NaN cells of ``overrides`` replace the mechanism output of that
        node (do-intervention); descendants see the replaced value.
        """
        noise = np.atleast_2d(noise)
        values = np.zeros(noise.shape)
        for d in self.order:
            mech = self.mechanisms[d]
            column = mech.fn(values[:, list(mech.parents)], noise[:, d])
            if overrides is not None:
                fixed = ~np.isnan(overrides[:, d])
                column = np.where(fixed, overrides[:, d], column)
            values[:, d] = column
        return values

    def sample(self, n: int, rng_seed=None) -> "ScmSample":
        if n < 0:
            raise ValidationException(f"sample count must be non-negative, got {n}")
        noise = self.draw_noise(n, rng_seed)
        values = self.simulate(noise)
        if not np.all(np.isfinite(values)):
            raise DataException("mechanisms produced non-finite values")
        return ScmSample(self, values, noise)


@dataclass
class ScmSample:
    """Generated rows together with the noise that produced them"""

    scm: Scm
    values: np.ndarray
    noise: np.ndarray
    mask: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if self.mask is None:
            self.mask = np.zeros(self.values.shape, dtype=bool)

    @property
    def dag(self) -> Dag:
        return self.scm.dag

    @property
    def dataset(self) -> Dataset:
        return Dataset(self.scm.names, self.values, self.scm.cardinalities, self.mask)


# Categorical networks


class _CptSampler:
    """Inverse-CDF draw from a conditional probability table given uniform noise"""

    def __init__(self, cpt: np.ndarray, parent_cardinalities: Sequence[int]):
        self.cpt = cpt
        self.cumulative = np.cumsum(cpt, axis=1)
        self.parent_cardinalities = list(parent_cardinalities)

    def __call__(self, parent_values: np.ndarray, u: np.ndarray) -> np.ndarray:
        configs, _ = parent_config_index(
            parent_values.astype(np.int64) if self.parent_cardinalities else None,
            self.parent_cardinalities,
            n=u.size,
        )
        drawn = (u[:, None] >= self.cumulative[configs]).sum(axis=1)
        return np.minimum(drawn, self.cpt.shape[1] - 1).astype(np.float64)


def gen_tabular_network(
    dag: Dag,
    cardinalities: Sequence[int],
    alpha_star: float,
    n: int,
    rng_seed=None,
    names: Optional[Sequence[str]] = None,
) -> ScmSample:
    """
    Categorical network with Dirichlet(alpha_star) CPTs.

    One parameter vector is drawn per (node, parent configuration), nodes in
    index order; rows are then sampled ancestrally.
    """
    cards = tuple(int(c) for c in cardinalities)
    if len(cards) != dag.num_nodes:
        raise ValidationException("one cardinality per node is required")
    if min(cards) < 2:
        raise ValidationException("categorical nodes need at least two values")
    if alpha_star <= 0:
        raise ValidationException(f"alpha_star must be positive, got {alpha_star}")
    param_seed, sample_seed = np.random.SeedSequence(rng_seed).spawn(2)
    rng = np.random.default_rng(param_seed)
    mechanisms = []
    for d in range(dag.num_nodes):
        parent_cards = [cards[p] for p in dag.parents(d)]
        num_configs = int(np.prod(parent_cards)) if parent_cards else 1
        cpt = rng.dirichlet(np.full(cards[d], alpha_star), size=num_configs)
        mechanisms.append(
            Mechanism(dag.parents(d), _CptSampler(cpt, parent_cards), noise_kind="uniform", label="cpt")
        )
    scm = Scm(dag, mechanisms, tuple(names) if names else (), cards)
    return scm.sample(n, sample_seed)


def cpt_of(sample: ScmSample, node: int) -> np.ndarray:
    """Sampled CPT of a categorical node, rows indexed by parent configuration"""
    fn = sample.scm.mechanisms[node].fn
    if not isinstance(fn, _CptSampler):
        raise ValidationException(f"node {node} is not a categorical node")
    return fn.cpt


def gen_tabular_chain(cardinality: int, alpha_star: float, n: int, rng_seed=None) -> ScmSample:
    """Chain A -> B -> C"""
    dag = Dag.from_edges(3, [(0, 1), (1, 2)])
    return gen_tabular_network(dag, [cardinality] * 3, alpha_star, n, rng_seed)


CANCER_NAMES = ("Pollution", "Smoker", "Cancer", "Xray", "Dyspnoea")


def gen_cancer_network(n: int, rng_seed=None, alpha_star: float = 1.0) -> ScmSample:
    """Binary network P -> C <- S, C -> X, C -> D with seeded Dirichlet CPTs"""
    dag = Dag.from_edges(5, [(0, 2), (1, 2), (2, 3), (2, 4)])
    return gen_tabular_network(dag, [2] * 5, alpha_star, n, rng_seed, CANCER_NAMES)


# Sinusoidal systems


def _standard_normal_root(x: np.ndarray, e: np.ndarray) -> np.ndarray:
    return e


def _sin_of_sum(x: np.ndarray, e: np.ndarray) -> np.ndarray:
    return np.sin(x[:, 0] + e)


def _sin_2ab(x: np.ndarray, e: np.ndarray) -> np.ndarray:
    return np.sin(2.0 * x[:, 0] * x[:, 1] + e)


def _sin_plus_noise(x: np.ndarray, e: np.ndarray) -> np.ndarray:
    return np.sin(x[:, 0]) + e


def _sin_3c(x: np.ndarray, e: np.ndarray) -> np.ndarray:
    return np.sin(3.0 * x[:, 0] + e)


class _SinMean:
    def __init__(self, frequency: float):
        self.frequency = frequency

    def __call__(self, x: np.ndarray, e: np.ndarray) -> np.ndarray:
        return np.sin(self.frequency * x[:, 0]) + e


def _root(label: str = "N(0,1)") -> Mechanism:
    return Mechanism((), _standard_normal_root, noise_std=1.0, label=label)


def gen_sin_chain3(n: int, rng_seed=None) -> ScmSample:
    """A ~ N(0,1), B = sin(A + e), C = sin(B + e), e ~ N(0, 0.1^2)"""
    dag = Dag.from_edges(3, [(0, 1), (1, 2)])
    mechanisms = [
        _root(),
        Mechanism((0,), _sin_of_sum, label="sin(A+e)"),
        Mechanism((1,), _sin_of_sum, label="sin(B+e)"),
    ]
    return Scm(dag, mechanisms).sample(n, rng_seed)


def gen_star5(n: int, rng_seed=None) -> ScmSample:
    """A, B ~ N(0,1); C = sin(2AB + e), D = sin(C) + e, E = sin(3C + e)"""
    dag = Dag.from_edges(5, [(0, 2), (1, 2), (2, 3), (2, 4)])
    mechanisms = [
        _root(),
        _root(),
        Mechanism((0, 1), _sin_2ab, label="sin(2AB+e)"),
        Mechanism((2,), _sin_plus_noise, label="sin(C)+e"),
        Mechanism((2,), _sin_3c, label="sin(3C+e)"),
    ]
    return Scm(dag, mechanisms).sample(n, rng_seed)


SIN_CHAIN5_FREQUENCIES = (1, 4)


def gen_sin_chain5(frequency: int, n: int, rng_seed=None) -> ScmSample:
    """X1 ~ N(0,1); X_d ~ N(sin(f * X_{d-1}), 0.1^2)"""
    if frequency not in SIN_CHAIN5_FREQUENCIES:
        raise ValidationException(f"frequency must be one of {SIN_CHAIN5_FREQUENCIES}, got {frequency}")
    dag = Dag.from_edges(5, [(d - 1, d) for d in range(1, 5)])
    mechanisms = [_root()] + [
        Mechanism((d - 1,), _SinMean(float(frequency)), label=f"sin({frequency}x)+e") for d in range(1, 5)
    ]
    return Scm(dag, mechanisms).sample(n, rng_seed)


# Fixed-point mechanisms over weighted adjacencies


FixedPointVariant = Literal["a", "b"]


class _WeightedMechanism:
    """X_j = sum_i w_i cos(X_i + 1) + Z_j (a) or 2 sin(s) + s + Z_j with s = sum_i w_i (X_i + 0.5) (b)"""

    def __init__(self, variant: FixedPointVariant, weights: np.ndarray):
        self.variant = variant
        self.weights = np.asarray(weights, dtype=np.float64)

    def __call__(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        if self.variant == "a":
            return np.cos(x + 1.0) @ self.weights + z
        s = (x + 0.5) @ self.weights
        return 2.0 * np.sin(s) + s + z


def _dag_of_weights(weights: np.ndarray) -> Dag:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[0] != weights.shape[1]:
        raise ValidationException(f"adjacency must be square, got shape {weights.shape}")
    if np.any(np.diag(weights) != 0):
        raise InvariantViolationException("adjacency has self-loops")
    edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(weights))]
    return Dag.from_edges(weights.shape[0], edges)


def random_weighted_adjacency(num_nodes: int, p_link: float = 0.25, rng_seed=None) -> np.ndarray:
    """GNP structure with weights uniform in [0.5, 2] and a random sign; ``A[i, j]`` weighs i -> j"""
    dag_seed, weight_seed = np.random.SeedSequence(rng_seed).spawn(2)
    dag = random_gnp_dag(num_nodes, p_link, dag_seed)
    rng = np.random.default_rng(weight_seed)
    weights = np.zeros((num_nodes, num_nodes))
    for u, v in dag.sort_key():
        weights[u, v] = rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
    return weights


def fixed_point_scm(variant: FixedPointVariant, weights: np.ndarray, names: Optional[Sequence[str]] = None) -> Scm:
    if variant not in ("a", "b"):
        raise ValidationException(f"unknown mechanism variant '{variant}'")
    weights = np.asarray(weights, dtype=np.float64)
    dag = _dag_of_weights(weights)
    mechanisms = [
        Mechanism(dag.parents(j), _WeightedMechanism(variant, weights[list(dag.parents(j)), j]), noise_std=1.0, label=variant)
        for j in range(dag.num_nodes)
    ]
    return Scm(dag, mechanisms, tuple(names) if names else ())


def gen_fixed_point_mechanism(
    variant: FixedPointVariant,
    weights: np.ndarray,
    n: int,
    rng_seed=None,
    names: Optional[Sequence[str]] = None,
) -> ScmSample:
    """
    Fixed points of X = A^T cos(X + 1) + Z (variant a) or
    X = 2 sin(A^T (X + 0.5)) + A^T (X + 0.5) + Z (variant b), Z ~ N(0, I).

    Acyclicity makes one sweep in topological order exact.

    Raises:
        InvariantViolationException: if the adjacency has a cycle
    """
    return fixed_point_scm(variant, weights, names).sample(n, rng_seed)


def fixed_point_residual(variant: FixedPointVariant, weights: np.ndarray, values: np.ndarray, noise: np.ndarray) -> float:
    """Largest absolute violation of the fixed-point equation over all cells"""
    weights = np.asarray(weights, dtype=np.float64)
    if variant == "a":
        rhs = np.cos(values + 1.0) @ weights + noise
    else:
        s = (values + 0.5) @ weights
        rhs = 2.0 * np.sin(s) + s + noise
    return float(np.max(np.abs(values - rhs))) if values.size else 0.0


# Compound nonlinear catalog


def _sin30(x, e):
    return np.sin(30.0 * e)


def _scale10(x, e):
    return 10.0 * e


def _sin2_add(x, e):
    return np.sin(2.0 * x[:, 0]) + e


def _cubic_sin(x, e):
    a = x[:, 0]
    return np.sin(a ** 3 - a + e)


def _cube(x, e):
    return (x[:, 0] + e) ** 3


def _recip(x, e):
    a = x[:, 0]
    return np.sign(a) / (np.abs(a) + 0.1) + e


def _sin_recip(x, e):
    return np.sin(1.0 / (np.abs(x[:, 0]) + 0.1) + e)


def _sin_cube_sq(x, e):
    return np.sin(2.0 * x[:, 0] ** 3 - x[:, 1] ** 2) + e


def _sgn_sin4(x, e):
    return np.sign(x[:, 0]) * np.sin(4.0 * x[:, 0] * x[:, 1] + e)


def _sgn_sin2(x, e):
    return np.sign(x[:, 0]) * np.sin(2.0 * x[:, 0] * x[:, 1] + e)


def _sin_prod4(x, e):
    return np.sin(4.0 * x[:, 0] * x[:, 1] + e)


def _sin_mix_recip(x, e):
    return np.sin(2.0 * x[:, 0]) * np.sin(1.0 / (np.abs(x[:, 1]) + 0.1)) + e


def _sin2_sin_prod4(x, e):
    return np.sin(2.0 * x[:, 0]) * np.sin(4.0 * x[:, 0] * x[:, 1] + e)


def _sin_prod4_3(x, e):
    return np.sin(4.0 * x[:, 0] * x[:, 1] * x[:, 2] + e)


# name -> (arity, function, formula over X, Y, Z = first, second, third parent)
COMPOUND_FUNCTIONS: Dict[str, Tuple[int, MechanismFn, str]] = {
    "sin30": (0, _sin30, "sin(30e)"),
    "scale10": (0, _scale10, "10e"),
    "sin2_add": (1, _sin2_add, "sin(2X)+e"),
    "cubic_sin": (1, _cubic_sin, "sin(X^3-X+e)"),
    "cube": (1, _cube, "(X+e)^3"),
    "recip": (1, _recip, "sgn(X)/(|X|+0.1)+e"),
    "sin_recip": (1, _sin_recip, "sin(1/(|X|+0.1)+e)"),
    "sin_cube_sq": (2, _sin_cube_sq, "sin(2X^3-Y^2)+e"),
    "sgn_sin4": (2, _sgn_sin4, "sgn(X)sin(4XY+e)"),
    "sgn_sin2": (2, _sgn_sin2, "sgn(X)sin(2XY+e)"),
    "sin_prod4": (2, _sin_prod4, "sin(4XY+e)"),
    "sin_mix_recip": (2, _sin_mix_recip, "sin(2X)sin(1/(|Y|+0.1))+e"),
    "sin2_sin_prod4": (2, _sin2_sin_prod4, "sin(2X)sin(4XY+e)"),
    "sin_prod4_3": (3, _sin_prod4_3, "sin(4XYZ+e)"),
}

A, B, C, D, E = range(5)

# One row per system: (function, parents) for nodes A..E.
COMPOUND_CATALOG: Tuple[Tuple[Tuple[str, Tuple[int, ...]], ...], ...] = (
    (("sin30", ()), ("sin2_add", (A,)), ("cubic_sin", (B,)), ("cube", (C,)), ("recip", (A,))),
    (("scale10", ()), ("cube", (A,)), ("sin2_add", (A,)), ("sin_recip", (C,)), ("sin2_add", (A,))),
    (("scale10", ()), ("scale10", ()), ("recip", (B,)), ("sin_cube_sq", (C, B)), ("sgn_sin4", (D, A))),
    (("scale10", ()), ("recip", (A,)), ("scale10", ()), ("sin_cube_sq", (C, A)), ("sgn_sin4", (D, A))),
    (("sin30", ()), ("cube", (A,)), ("sin30", ()), ("cube", (C,)), ("cubic_sin", (C,))),
    (("scale10", ()), ("sin30", ()), ("sin_cube_sq", (B, A)), ("sgn_sin4", (C, A)), ("sin_recip", (D,))),
    (("sin30", ()), ("cubic_sin", (A,)), ("sin_mix_recip", (B, A)), ("sin_prod4_3", (C, B, A)), ("sin_cube_sq", (D, C))),
    (("sin30", ()), ("cubic_sin", (A,)), ("sin_mix_recip", (B, A)), ("recip", (A,)), ("sin_mix_recip", (D, A))),
    (("scale10", ()), ("scale10", ()), ("sin_prod4", (B, A)), ("sin30", ()), ("sin_prod4_3", (D, C, A))),
    (("sin30", ()), ("cubic_sin", (A,)), ("sin_cube_sq", (B, A)), ("scale10", ()), ("sin2_sin_prod4", (B, A))),
    (("sin30", ()), ("sin30", ()), ("sgn_sin2", (B, A)), ("sin30", ()), ("sin2_sin_prod4", (D, A))),
    (("sin30", ()), ("sin2_add", (A,)), ("sin_prod4", (B, A)), ("sin_mix_recip", (C, B)), ("recip", (C,))),
    (("scale10", ()), ("cube", (A,)), ("sin_prod4", (B, A)), ("sgn_sin2", (C, A)), ("sin_prod4", (D, A))),
    (("sin30", ()), ("cube", (A,)), ("scale10", ()), ("sin_prod4", (C, A)), ("recip", (D,))),
    (("scale10", ()), ("cubic_sin", (A,)), ("cube", (B,)), ("cubic_sin", (C,)), ("sin2_add", (A,))),
    (("sin30", ()), ("recip", (A,)), ("recip", (B,)), ("sin2_add", (C,)), ("sgn_sin4", (D, A))),
    (("sin30", ()), ("recip", (A,)), ("sin_cube_sq", (B, A)), ("scale10", ()), ("recip", (D,))),
    (("scale10", ()), ("sin30", ()), ("sgn_sin2", (B, A)), ("sin_mix_recip", (C, B)), ("sin_prod4", (D, A))),
    (("sin30", ()), ("sin_recip", (A,)), ("cube", (B,)), ("sin_cube_sq", (B, A)), ("cubic_sin", (B,))),
    (("sin30", ()), ("sin_recip", (A,)), ("cubic_sin", (B,)), ("sin_recip", (B,)), ("sin30", ())),
)


def compound_scm(spec: Sequence[Tuple[str, Sequence[int]]]) -> Scm:
    """SCM from (function name, ordered parents) per node"""
    mechanisms, edges = [], []
    for node, (name, parents) in enumerate(spec):
        if name not in COMPOUND_FUNCTIONS:
            raise ValidationException(f"unknown compound function '{name}'")
        arity, fn, formula = COMPOUND_FUNCTIONS[name]
        if arity != len(parents):
            raise ValidationException(f"'{name}' takes {arity} parents, node {node} lists {len(parents)}")
        mechanisms.append(Mechanism(tuple(parents), fn, noise_std=COMPOUND_NOISE_STD, label=formula))
        edges.extend((p, node) for p in parents)
    return Scm(Dag.from_edges(len(spec), edges), mechanisms)


def random_compound_spec(num_nodes: int = 5, p_link: float = 0.25, rng_seed=None) -> List[Tuple[str, Tuple[int, ...]]]:
    """
    GNP structure (redrawn until every in-degree is at most 3) with each
    node's function drawn uniformly among catalog functions of its in-degree;
    parents are passed highest index first.
    """
    rng = np.random.default_rng(rng_seed)
    while True:
        dag = random_gnp_dag(num_nodes, p_link, rng)
        if max(dag.in_degree(v) for v in range(num_nodes)) <= COMPOUND_MAX_IN_DEGREE:
            break
    by_arity: Dict[int, List[str]] = {}
    for name, (arity, _, _) in COMPOUND_FUNCTIONS.items():
        by_arity.setdefault(arity, []).append(name)
    spec = []
    for v in range(num_nodes):
        parents = tuple(sorted(dag.parents(v), reverse=True))
        candidates = by_arity[len(parents)]
        spec.append((candidates[int(rng.integers(len(candidates)))], parents))
    return spec


def gen_compound_nonlinear(index: Optional[int], n: int, rng_seed=None) -> ScmSample:
    """
    Catalog row ``index`` (1..20), or a random compound system when ``index``
    is None. Noise e ~ N(0, 0.1^2) is drawn independently per cell.
    """
    if index is None:
        spec_seed, sample_seed = np.random.SeedSequence(rng_seed).spawn(2)
        spec = random_compound_spec(rng_seed=spec_seed)
        logger.info("Random compound system: %s", spec)
        return compound_scm(spec).sample(n, sample_seed)
    if not 1 <= index <= len(COMPOUND_CATALOG):
        raise ValidationException(f"catalog index must lie in 1..{len(COMPOUND_CATALOG)}, got {index}")
    return compound_scm(COMPOUND_CATALOG[index - 1]).sample(n, rng_seed)


# Interventions


class InterventionPolicy(BaseModel):
    """Rows in [start, end) are intervened on with the given probability"""
    start: int = Field(default=0, ge=0)
    end: int = Field(ge=0)
    probability: float = Field(default=0.5, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def window_ordered(self) -> "InterventionPolicy":
        if self.end < self.start:
            raise ValueError("window end precedes its start")
        return self


def apply_interventions(sample: ScmSample, policy: InterventionPolicy, rng_seed=None) -> ScmSample:
    """
    Inject do-interventions into the rows of the policy window.

    Each window row is hit with ``policy.probability``; a hit picks a node
    uniformly, sets it to a random value (uniform over the node's empirical
    range, or over its categories) and re-simulates the row's descendants
    from the stored noise. Hit cells are marked in the mask.
    """
    n, num_nodes = sample.values.shape
    if policy.end > n:
        raise ValidationException(f"intervention window [{policy.start}, {policy.end}) exceeds {n} rows")
    rng = np.random.default_rng(rng_seed)
    width = policy.end - policy.start
    hits = rng.random(width) < policy.probability
    nodes = rng.integers(0, num_nodes, size=width)
    draws = rng.random(width)

    rows = policy.start + np.flatnonzero(hits)
    nodes = nodes[hits]
    draws = draws[hits]
    cards = sample.scm.cardinalities
    if cards is not None:
        replacement = np.floor(draws * np.asarray(cards)[nodes])
    else:
        lo = sample.values.min(axis=0) if n else np.zeros(num_nodes)
        hi = sample.values.max(axis=0) if n else np.zeros(num_nodes)
        replacement = lo[nodes] + draws * (hi[nodes] - lo[nodes])

    overrides = np.full((rows.size, num_nodes), np.nan)
    overrides[np.arange(rows.size), nodes] = replacement
    values = sample.values.copy()
    mask = sample.mask.copy()
    if rows.size:
        values[rows] = sample.scm.simulate(sample.noise[rows], overrides)
        mask[rows, nodes] = True
    logger.info("Intervened on %d of %d window rows", rows.size, width)
    return replace(sample, values=values, mask=mask)
