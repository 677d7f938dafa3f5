"""
Neural CPD Service

Discretized-softmax MLP conditional model used for continuous data:
targets are squashed with tanh onto a uniform grid of bins, parent values are
lifted with random Fourier features, and a ReLU network with dropout outputs
bin logits h. Predictions use the calibrated layer softmax(beta * h).

Training alternates ``theta_steps_per_beta_step`` Adam steps on the
uncalibrated cross-entropy of training batches with one Adam step on
log(beta) against the calibrated loss of validation rows, and returns the
best checkpoint seen by the early-stopping monitor.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from preqdag.schemas.neural import MlpCpdConfig
from preqdag.schemas.scoring import TrainReportRecord
from preqdag.utils.exceptions import TrainingException, ValidationException

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiscretizationGrid:
    """Uniform grid over [-1, 1] applied after a tanh squashing"""

    num_bins: int = 128

    def bins(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValidationException("cannot discretize non-finite values")
        index = np.floor((np.tanh(values) + 1.0) / 2.0 * self.num_bins).astype(np.int64)
        return np.clip(index, 0, self.num_bins - 1)

    def discretize(self, value: float) -> int:
        return int(self.bins(np.asarray([value]))[0])


def discretize(grid: DiscretizationGrid, value: float) -> int:
    return grid.discretize(value)


def derive_seed(*keys: int) -> int:
    """Independent 32-bit seed for a tuple of integer keys"""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def fourier_embed(freqs: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """
    Random Fourier features [sin(F x), cos(F x)].

    Args:
        freqs: (num_features, num_inputs) frozen frequency matrix
        inputs: a single (num_inputs,) vector or an (n, num_inputs) batch

    Returns:
        (2 * num_features,) vector or (n, 2 * num_features) batch
    """
    freqs = np.asarray(freqs, dtype=np.float64)
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != freqs.shape[1]:
        raise ValidationException(
            f"inputs with {x.shape[-1]} columns do not match frequencies of shape {freqs.shape}"
        )
    projected = x @ freqs.T
    features = np.concatenate([np.sin(projected), np.cos(projected)], axis=1)
    return features[0] if single else features


def _model_inputs(inputs: Optional[np.ndarray], n: int) -> np.ndarray:
    # Root CPDs see a constant scalar input.
    if inputs is None or np.asarray(inputs).size == 0 and n > 0:
        return np.ones((n, 1))
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] == 0:
        return np.ones((x.shape[0], 1))
    return x


def _calibrated_log_probs(h: np.ndarray, beta: float) -> np.ndarray:
    z = beta * h
    return z - logsumexp(z, axis=1, keepdims=True)


class MlpNetwork:
    """Fully connected ReLU network producing ``num_bins`` logits"""

    def __init__(self, weights: List[np.ndarray], biases: List[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValidationException("network needs matching, nonempty weight and bias lists")
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(
        cls,
        input_dim: int,
        hidden_width: int,
        hidden_layers: int,
        num_bins: int,
        rng: np.random.Generator,
    ) -> "MlpNetwork":
        sizes = [input_dim] + [hidden_width] * hidden_layers + [num_bins]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @property
    def params(self) -> List[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def copy(self) -> "MlpNetwork":
        return MlpNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def logits(self, x: np.ndarray) -> np.ndarray:
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w + b, 0.0)
        return a @ self.weights[-1] + self.biases[-1]

    def forward(
        self,
        x: np.ndarray,
        dropout_rate: float = 0.0,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[np.ndarray, list]:
        cache = []
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = a @ w + b
            out = np.maximum(z, 0.0)
            keep = None
            if dropout_rate > 0.0 and rng is not None:
                keep = (rng.random(out.shape) >= dropout_rate) / (1.0 - dropout_rate)
                out = out * keep
            cache.append((a, z, keep))
            a = out
        cache.append((a, None, None))
        return a @ self.weights[-1] + self.biases[-1], cache

    def backward(self, cache: list, dh: np.ndarray) -> List[np.ndarray]:
        """Gradients in the order of :attr:`params`"""
        last_input = cache[-1][0]
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        grads_w[-1] = last_input.T @ dh
        grads_b[-1] = dh.sum(axis=0)
        da = dh @ self.weights[-1].T
        for i in range(len(self.weights) - 2, -1, -1):
            a_in, z, keep = cache[i]
            if keep is not None:
                da = da * keep
            dz = da * (z > 0.0)
            grads_w[i] = a_in.T @ dz
            grads_b[i] = dz.sum(axis=0)
            if i:
                da = dz @ self.weights[i].T
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.extend((gw, gb))
        return grads

    def loss_and_grads(
        self,
        x: np.ndarray,
        y: np.ndarray,
        beta: float = 1.0,
        dropout_rate: float = 0.0,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[float, List[np.ndarray], float]:
        """
        Mean cross-entropy of softmax(beta * h) and its gradients.

        Returns:
            (loss, gradients w.r.t. params, gradient w.r.t. beta)
        """
        h, cache = self.forward(x, dropout_rate, rng)
        log_p = _calibrated_log_probs(h, beta)
        n = y.shape[0]
        rows = np.arange(n)
        loss = -float(np.mean(log_p[rows, y]))
        dz = np.exp(log_p)
        dz[rows, y] -= 1.0
        dz /= n
        dbeta = float(np.sum(dz * h))
        grads = self.backward(cache, beta * dz)
        return loss, grads, dbeta


class Adam:
    """Adam optimizer updating a list of numpy arrays in place"""

    def __init__(
        self,
        params: Sequence[np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


@dataclass
class CalibratedPredictor:
    """Trained network with frozen Fourier frequencies and temperature beta"""

    network: MlpNetwork
    log_beta: float
    freqs: np.ndarray
    num_bins: int

    @property
    def beta(self) -> float:
        return math.exp(self.log_beta)

    def features(self, inputs: Optional[np.ndarray], n: int) -> np.ndarray:
        return fourier_embed(self.freqs, _model_inputs(inputs, n))

    def log_probs(self, inputs: Optional[np.ndarray], n: Optional[int] = None) -> np.ndarray:
        """(n, num_bins) calibrated log-probabilities; dropout is off"""
        n = n if n is not None else len(inputs)
        return _calibrated_log_probs(self.network.logits(self.features(inputs, n)), self.beta)

    def to_checkpoint(self) -> Dict[str, Any]:
        return {
            "num_bins": self.num_bins,
            "log_beta": self.log_beta,
            "freqs": self.freqs.tolist(),
            "layers": [
                {"shape": list(w.shape), "weight": w.tolist(), "bias": b.tolist()}
                for w, b in zip(self.network.weights, self.network.biases)
            ],
        }


def eval_block(
    predictor: CalibratedPredictor,
    inputs: Optional[np.ndarray],
    targets: np.ndarray,
) -> np.ndarray:
    """Log calibrated probability of each row's true bin"""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.ndim != 1:
        raise ValidationException("targets must be one-dimensional bin indices")
    if targets.size == 0:
        return np.zeros(0)
    if targets.min() < 0 or targets.max() >= predictor.num_bins:
        raise ValidationException(f"targets fall outside [0, {predictor.num_bins})")
    if inputs is not None and np.asarray(inputs).size and len(inputs) != targets.size:
        raise ValidationException("inputs and targets differ in length")
    log_p = predictor.log_probs(inputs, n=targets.size)
    return log_p[np.arange(targets.size), targets]


@dataclass
class TrainReport:
    learning_rate: float
    steps: int
    val_loss: float
    seed: int
    candidates: List[Dict[str, float]] = field(default_factory=list)

    def to_record(self) -> TrainReportRecord:
        return TrainReportRecord(
            learning_rate=self.learning_rate,
            steps=self.steps,
            val_loss=self.val_loss,
            seed=self.seed,
            candidates=self.candidates,
        )


def validation_size(num_rows: int, config: MlpCpdConfig) -> int:
    return min(config.max_validation_rows, max(1, int(round(num_rows * config.validation_fraction))))


def _val_loss(network: MlpNetwork, x_val: np.ndarray, y_val: np.ndarray, beta: float) -> float:
    log_p = _calibrated_log_probs(network.logits(x_val), beta)
    return -float(np.mean(log_p[np.arange(y_val.size), y_val]))


def _train_single(
    x_in: np.ndarray,
    targets: np.ndarray,
    n_train: int,
    config: MlpCpdConfig,
    learning_rate: float,
    seed: int,
) -> Tuple[CalibratedPredictor, int, float]:
    rng = np.random.default_rng(seed)
    freqs = rng.normal(0.0, config.fourier_scale, size=(config.fourier_features, x_in.shape[1]))
    x_train, y_train = x_in[:n_train], targets[:n_train]
    x_val = fourier_embed(freqs, x_in[n_train:])
    y_val = targets[n_train:]

    network = MlpNetwork.init(
        2 * config.fourier_features, config.hidden_width, config.hidden_layers, config.num_bins, rng
    )
    log_beta = np.zeros(1)
    theta_opt = Adam(network.params, learning_rate)
    beta_opt = Adam([log_beta], config.beta_learning_rate)

    best_loss = _val_loss(network, x_val, y_val, 1.0)
    best_network, best_log_beta = network.copy(), 0.0
    stale = 0
    batch = min(config.batch_size, n_train)
    order = rng.permutation(n_train)
    cursor = 0
    step = 0
    for step in range(1, config.max_steps + 1):
        if cursor + batch > n_train:
            order = rng.permutation(n_train)
            cursor = 0
        idx = order[cursor:cursor + batch]
        cursor += batch
        _, grads, _ = network.loss_and_grads(
            fourier_embed(freqs, x_train[idx]), y_train[idx], 1.0, config.dropout_rate, rng
        )
        theta_opt.step(grads)

        if step % config.theta_steps_per_beta_step == 0:
            vb = rng.integers(0, y_val.size, size=min(config.batch_size, y_val.size))
            beta = math.exp(log_beta[0])
            h = network.logits(x_val[vb])
            dz = np.exp(_calibrated_log_probs(h, beta))
            dz[np.arange(vb.size), y_val[vb]] -= 1.0
            dbeta = float(np.sum(dz * h)) / vb.size
            beta_opt.step([np.array([dbeta * beta])])

        if step % config.eval_every == 0 or step == config.max_steps:
            loss = _val_loss(network, x_val, y_val, math.exp(log_beta[0]))
            if loss < best_loss - config.min_improvement:
                stale = 0
            else:
                stale += 1
            if loss < best_loss:
                best_loss = loss
                best_network, best_log_beta = network.copy(), float(log_beta[0])
            if stale >= config.patience:
                break

    predictor = CalibratedPredictor(best_network, best_log_beta, freqs, config.num_bins)
    return predictor, step, best_loss


def train_cpd(
    inputs: Optional[np.ndarray],
    targets: np.ndarray,
    config: MlpCpdConfig,
    rng_seed: int,
) -> Tuple[CalibratedPredictor, TrainReport]:
    """
    Train one CPD from scratch on a history prefix.

    The last ``validation_fraction`` of the rows (at least 1, at most
    ``max_validation_rows``) is held out for calibration and early stopping.
    Every candidate learning rate gets its own run; the one with the lower
    calibrated validation log-loss wins.

    Raises:
        TrainingException: if the history is empty or too short to split
    """
    targets = np.asarray(targets, dtype=np.int64)
    n = targets.size
    if n == 0:
        raise TrainingException("cannot train on an empty history")
    n_val = validation_size(n, config)
    n_train = n - n_val
    if n_train < 1:
        raise TrainingException(
            f"history of {n} rows cannot be split into training and validation rows"
        )
    if targets.min() < 0 or targets.max() >= config.num_bins:
        raise ValidationException(f"targets fall outside [0, {config.num_bins})")
    x_in = _model_inputs(inputs, n)

    best: Optional[Tuple[CalibratedPredictor, TrainReport]] = None
    candidates = []
    for lr_index, learning_rate in enumerate(config.learning_rates):
        seed = derive_seed(rng_seed, lr_index)
        predictor, steps, val_loss = _train_single(x_in, targets, n_train, config, learning_rate, seed)
        candidates.append({"learning_rate": learning_rate, "steps": steps, "val_loss": val_loss})
        logger.debug("lr=%g steps=%d calibrated val loss=%.4f", learning_rate, steps, val_loss)
        if best is None or val_loss < best[1].val_loss:
            best = (predictor, TrainReport(learning_rate, steps, val_loss, seed))
    predictor, report = best
    report.candidates = candidates
    return predictor, report
