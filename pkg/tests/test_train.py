import numpy as np
import pytest

from idode.dataset import Normalization, SupervisedSet
from idode.net import backward_weights, forward, init_model
from idode.systems import lorenz
from idode.train import DivergenceError, TrainConfig, train, train_loss


def affine_supervised(n=20_000, seed=0, normalize=True) -> SupervisedSet:
    """Targets generated from the Lorenz affine decomposition on a small box."""
    sys = lorenz()
    rng = np.random.default_rng(seed)
    states = rng.uniform(-5, 5, size=(n, 3))
    alphas = rng.uniform([9, 27, 2], [11, 29, 4], size=(n, 3))
    L, b = sys.affine_decomposition(states)
    targets = np.einsum("bnm,bm->bn", L, alphas) + b
    x = np.concatenate([states, alphas], axis=1)
    if normalize:
        norm = Normalization(x.mean(0), x.std(0), targets.mean(0), targets.std(0))
        x = norm.normalize_inputs(x)
        targets = norm.normalize_targets(targets)
    else:
        norm = Normalization.identity(6, 3)
    return SupervisedSet(
        inputs=x, targets=targets, normalization=norm, dt=0.01,
        normalized=normalize, param_dim=3,
    )


@pytest.fixture(scope="module")
def trained_affine():
    data = affine_supervised()
    model = init_model([6, 64, 64, 64, 3], activation="softplus", seed=1, input_split=3)
    cfg = TrainConfig(lr=1e-3, batch_size=256, epochs=2000, seed=2, optimizer="adam",
                      log_every=10)
    trained, report = train(model, data, cfg)
    return data, trained, report


def test_affine_targets_reach_low_holdout_mse(trained_affine):
    _, _, report = trained_affine
    assert report.final_holdout_loss <= 1e-3


def test_loss_curve_non_increasing_in_windows(trained_affine):
    # rolling mean over a 50-entry window; forbid divergence, allow wiggle
    _, _, report = trained_affine
    curve = report.train_curve
    window = 50
    rolled = np.convolve(curve, np.ones(window) / window, mode="valid")
    assert np.all(rolled[1:] <= rolled[:-1] * 1.02)


def test_zero_epochs_returns_model_unchanged():
    data = affine_supervised(n=500)
    model = init_model([6, 16, 3], seed=3, input_split=3)
    trained, report = train(model, data, TrainConfig(epochs=0, seed=0))
    for w0, w1 in zip(model.weights, trained.weights):
        assert np.array_equal(w0, w1)
    assert report.steps.size == 0


def test_training_deterministic():
    data = affine_supervised(n=2000)
    cfg = TrainConfig(lr=1e-3, batch_size=128, epochs=50, seed=5, optimizer="adam")
    m1, _ = train(init_model([6, 16, 3], seed=4, input_split=3), data, cfg)
    m2, _ = train(init_model([6, 16, 3], seed=4, input_split=3), data, cfg)
    for a, b in zip(m1.weights + m1.biases, m2.weights + m2.biases):
        assert np.array_equal(a, b)


def test_input_model_not_mutated():
    data = affine_supervised(n=1000)
    model = init_model([6, 16, 3], seed=6, input_split=3)
    before = [w.copy() for w in model.weights]
    train(model, data, TrainConfig(epochs=20, seed=0))
    for w0, w1 in zip(before, model.weights):
        assert np.array_equal(w0, w1)


def test_train_attaches_normalization():
    data = affine_supervised(n=500)
    model = init_model([6, 16, 3], seed=3, input_split=3)
    assert model.normalization is None
    trained, _ = train(model, data, TrainConfig(epochs=1, seed=0))
    assert trained.normalization is data.normalization


def test_train_loss_zero_for_exact_model():
    data = affine_supervised(n=200)
    model = init_model([6, 16, 3], seed=0, input_split=3)
    exact = SupervisedSet(
        inputs=data.inputs,
        targets=forward(model, data.inputs),
        normalization=data.normalization,
        dt=data.dt,
        normalized=False,
        param_dim=3,
    )
    assert train_loss(model, exact) == 0.0


def test_train_loss_mean_convention():
    # zero model output, unit targets -> loss exactly 1 regardless of D
    model = init_model([4, 8, 3], seed=1, input_split=2)
    for w in model.weights:
        w[:] = 0.0
    data = SupervisedSet(
        inputs=np.zeros((7, 4)),
        targets=np.ones((7, 3)),
        normalization=Normalization.identity(4, 3),
        dt=0.1,
        normalized=False,
        param_dim=2,
    )
    assert train_loss(model, data) == 1.0


def test_train_loss_batching_invariance():
    from idode.train import _mse_chunked

    data = affine_supervised(n=1111)
    model = init_model([6, 16, 3], seed=7, input_split=3)
    full = _mse_chunked(model, data.inputs, data.targets, chunk=10**9)
    small = _mse_chunked(model, data.inputs, data.targets, chunk=100)
    assert abs(full - small) < 1e-12


def test_divergence_raises():
    data = affine_supervised(n=500, normalize=False)  # raw scales, easy to blow up
    model = init_model([6, 32, 3], seed=8, input_split=3)
    cfg = TrainConfig(lr=1e6, batch_size=64, epochs=500, seed=0, optimizer="sgd_momentum",
                      momentum=0.0)
    with pytest.raises(DivergenceError):
        train(model, data, cfg)


def test_first_order_loss_decrease():
    # one full-batch plain-GD step changes the loss by -lr * ||grad||^2 + O(lr^2)
    data = affine_supervised(n=400)
    model = init_model([6, 24, 3], activation="softplus", seed=9, input_split=3)
    loss0 = train_loss(model, data)
    resid = forward(model, data.inputs) - data.targets
    g_out = (2.0 / (len(data) * data.target_dim)) * resid
    wg, bg = backward_weights(model, data.inputs, g_out)
    grad_sq = sum(float(np.sum(g * g)) for g in wg + bg)
    lr = 1e-6
    cfg = TrainConfig(lr=lr, batch_size=len(data), epochs=1, seed=0,
                      optimizer="sgd_momentum", momentum=0.0, eval_fraction=0.0)
    stepped, _ = train(model, data, cfg)
    loss1 = train_loss(stepped, data)
    predicted = -lr * grad_sq
    assert abs((loss1 - loss0) - predicted) <= 0.1 * abs(predicted)


def test_width_mismatch_rejected():
    data = affine_supervised(n=100)
    model = init_model([5, 8, 3], seed=0, input_split=3)
    with pytest.raises(ValueError, match="width"):
        train(model, data, TrainConfig(epochs=1))
    with pytest.raises(ValueError, match="width"):
        train_loss(model, data)


def test_sweeps_epoch_units():
    data = affine_supervised(n=256)
    model = init_model([6, 8, 3], seed=1, input_split=3)
    cfg = TrainConfig(epochs=2, batch_size=64, seed=0, epoch_units="sweeps",
                      eval_fraction=0.0, log_every=1)
    _, report = train(model, data, cfg)
    assert report.steps[-1] == 2 * int(np.ceil(256 / 64))
