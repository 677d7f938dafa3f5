import math

import numpy as np
import pytest

from preqdag.schemas.neural import MlpCpdConfig
from preqdag.services.neural import (
    Adam,
    CalibratedPredictor,
    DiscretizationGrid,
    MlpNetwork,
    derive_seed,
    discretize,
    eval_block,
    fourier_embed,
    train_cpd,
    validation_size,
)
from preqdag.utils.exceptions import TrainingException, ValidationException


def tiny_config(**overrides) -> MlpCpdConfig:
    params = dict(
        hidden_layers=1,
        hidden_width=16,
        fourier_features=8,
        fourier_scale=1.0,
        num_bins=8,
        batch_size=16,
        max_steps=60,
        eval_every=10,
        patience=3,
    )
    params.update(overrides)
    return MlpCpdConfig(**params)


def test_default_config_values() -> None:
    config = MlpCpdConfig()
    assert (config.hidden_layers, config.hidden_width) == (3, 512)
    assert config.dropout_rate == 0.5
    assert (config.fourier_features, config.fourier_scale) == (512, 10.0)
    assert config.num_bins == 128
    assert config.learning_rates == (1e-4, 3e-4)
    assert config.max_steps == 25_000


def test_discretize_examples() -> None:
    grid = DiscretizationGrid(128)
    assert discretize(grid, 0.0) == 64
    assert discretize(grid, 1e6) == 127
    assert discretize(grid, -1e6) == 0
    bins = grid.bins(np.linspace(-5, 5, 101))
    assert bins.min() >= 0 and bins.max() <= 127
    assert np.all(np.diff(bins) >= 0)


def test_discretize_rejects_non_finite() -> None:
    with pytest.raises(ValidationException):
        discretize(DiscretizationGrid(), float("nan"))


def test_fourier_embed_shapes(rng) -> None:
    freqs = rng.normal(size=(4, 2))
    single = fourier_embed(freqs, np.array([0.3, -1.0]))
    batch = fourier_embed(freqs, rng.normal(size=(5, 2)))
    assert single.shape == (8,)
    assert batch.shape == (5, 8)
    np.testing.assert_allclose(single[:4] ** 2 + single[4:] ** 2, np.ones(4))
    with pytest.raises(ValidationException):
        fourier_embed(freqs, np.zeros(3))


def test_fourier_embed_of_zero_input() -> None:
    features = fourier_embed(np.ones((3, 1)), np.zeros(1))
    np.testing.assert_array_equal(features, [0, 0, 0, 1, 1, 1])


def test_analytic_gradients_match_central_differences(rng) -> None:
    network = MlpNetwork.init(input_dim=6, hidden_width=8, hidden_layers=2, num_bins=8, rng=rng)
    x = rng.normal(size=(5, 6))
    y = rng.integers(0, 8, size=5)
    beta = 1.3
    _, grads, dbeta = network.loss_and_grads(x, y, beta)

    def loss_at() -> float:
        return network.loss_and_grads(x, y, beta)[0]

    eps = 1e-6
    for param, grad in zip(network.params, grads):
        numeric = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            original = param[idx]
            param[idx] = original + eps
            upper = loss_at()
            param[idx] = original - eps
            lower = loss_at()
            param[idx] = original
            numeric[idx] = (upper - lower) / (2 * eps)
        assert np.all(np.abs(grad - numeric) <= 1e-4 * (np.abs(grad) + np.abs(numeric)) + 1e-8)

    upper = network.loss_and_grads(x, y, beta + eps)[0]
    lower = network.loss_and_grads(x, y, beta - eps)[0]
    numeric_beta = (upper - lower) / (2 * eps)
    assert abs(dbeta - numeric_beta) <= 1e-4 * (abs(dbeta) + abs(numeric_beta)) + 1e-8


def test_dropout_is_only_active_with_a_generator(rng) -> None:
    network = MlpNetwork.init(3, 16, 2, 4, rng)
    x = rng.normal(size=(10, 3))
    h_eval, _ = network.forward(x, dropout_rate=0.5, rng=None)
    np.testing.assert_allclose(h_eval, network.logits(x))
    h_train, _ = network.forward(x, dropout_rate=0.5, rng=np.random.default_rng(0))
    assert not np.allclose(h_train, h_eval)


def test_adam_moves_against_the_gradient() -> None:
    param = np.array([1.0, -1.0])
    optimizer = Adam([param], lr=0.1)
    optimizer.step([np.array([2.0, -3.0])])
    # The first bias-corrected step has magnitude lr in every coordinate
    np.testing.assert_allclose(param, [0.9, -0.9], atol=1e-6)


def make_predictor(rng, num_bins: int = 8, log_beta: float = 0.0) -> CalibratedPredictor:
    network = MlpNetwork.init(2 * 4, 16, 2, num_bins, rng)
    return CalibratedPredictor(network, log_beta, rng.normal(size=(4, 1)), num_bins)


def test_calibrated_softmax_is_normalized(rng) -> None:
    predictor = make_predictor(rng, log_beta=0.7)
    log_probs = predictor.log_probs(rng.normal(size=(20, 1)))
    assert log_probs.shape == (20, 8)
    np.testing.assert_allclose(np.exp(log_probs).sum(axis=1), np.ones(20), atol=1e-12)


def test_larger_beta_lowers_entropy(rng) -> None:
    predictor = make_predictor(rng)
    x = rng.normal(size=(6, 1))
    entropies = []
    for beta in (0.5, 1.0, 2.0, 4.0):
        predictor.log_beta = math.log(beta)
        log_p = predictor.log_probs(x)
        entropies.append(-(np.exp(log_p) * log_p).sum(axis=1))
    for sharper, flatter in zip(entropies[1:], entropies[:-1]):
        assert np.all(sharper < flatter)


def test_zero_output_layer_evaluates_uniformly(rng) -> None:
    predictor = make_predictor(rng, num_bins=8, log_beta=1.5)
    predictor.network.weights[-1][:] = 0.0
    predictor.network.biases[-1][:] = 0.0
    log_probs = eval_block(predictor, rng.normal(size=(7, 1)), rng.integers(0, 8, size=7))
    np.testing.assert_allclose(log_probs, np.full(7, -math.log(8)))


def test_eval_block_rejects_bad_targets(rng) -> None:
    predictor = make_predictor(rng)
    with pytest.raises(ValidationException):
        eval_block(predictor, np.zeros((2, 1)), np.array([0, 8]))


def test_root_cpd_uses_constant_input(rng) -> None:
    predictor = make_predictor(rng)
    predictor.freqs = rng.normal(size=(4, 1))
    np.testing.assert_allclose(predictor.log_probs(None, n=3), predictor.log_probs(np.ones((3, 1))))


def test_derive_seed_is_deterministic() -> None:
    assert derive_seed(0, 1, 2, 3) == derive_seed(0, 1, 2, 3)
    assert derive_seed(0, 1, 2, 3) != derive_seed(0, 1, 2, 4)


def test_validation_size_bounds() -> None:
    config = MlpCpdConfig()
    assert validation_size(1, config) == 1
    assert validation_size(100, config) == 10
    assert validation_size(1_000_000, config) == 1024


@pytest.mark.parametrize("rows", [0, 1])
def test_training_needs_two_rows(rows: int) -> None:
    with pytest.raises(TrainingException):
        train_cpd(np.zeros((rows, 1)), np.zeros(rows, dtype=int), tiny_config(), 0)


def test_training_returns_best_checkpoint(rng) -> None:
    config = tiny_config()
    inputs = rng.normal(size=(120, 1))
    targets = DiscretizationGrid(config.num_bins).bins(np.sin(inputs[:, 0]) + 0.1 * rng.normal(size=120))
    predictor, report = train_cpd(inputs, targets, config, rng_seed=11)

    n_val = validation_size(120, config)
    val_loss = -np.mean(eval_block(predictor, inputs[-n_val:], targets[-n_val:]))
    assert val_loss == pytest.approx(report.val_loss, abs=1e-9)
    assert len(report.candidates) == len(config.learning_rates)
    best = min(report.candidates, key=lambda c: c["val_loss"])
    assert report.learning_rate == best["learning_rate"]
    assert 1 <= report.steps <= config.max_steps


def test_training_is_seeded(rng) -> None:
    config = tiny_config(max_steps=20)
    inputs = rng.normal(size=(40, 2))
    targets = rng.integers(0, config.num_bins, size=40)
    first, report_a = train_cpd(inputs, targets, config, rng_seed=5)
    second, report_b = train_cpd(inputs, targets, config, rng_seed=5)
    assert report_a.val_loss == report_b.val_loss
    np.testing.assert_array_equal(first.log_probs(inputs), second.log_probs(inputs))


def test_checkpoint_lists_layer_shapes(rng) -> None:
    predictor = make_predictor(rng)
    checkpoint = predictor.to_checkpoint()
    assert checkpoint["num_bins"] == 8
    assert [layer["shape"] for layer in checkpoint["layers"]] == [[8, 16], [16, 16], [16, 8]]


@pytest.mark.slow
def test_sine_fit_beats_the_uniform_baseline() -> None:
    config = MlpCpdConfig(
        hidden_layers=2,
        hidden_width=128,
        dropout_rate=0.0,
        fourier_features=64,
        fourier_scale=1.0,
        learning_rates=(1e-3,),
        max_steps=4_000,
    )
    grid = DiscretizationGrid(config.num_bins)
    rng = np.random.default_rng(2024)

    def draw(n: int):
        x = rng.uniform(-math.pi, math.pi, size=(n, 1))
        return x, grid.bins(np.sin(x[:, 0]) + 0.01 * rng.normal(size=n))

    inputs, targets = draw(2_000)
    predictor, _ = train_cpd(inputs, targets, config, rng_seed=0)
    eval_inputs, eval_targets = draw(1_000)
    eval_loss = -float(np.mean(eval_block(predictor, eval_inputs, eval_targets)))
    assert math.log(config.num_bins) - eval_loss >= 2.0
