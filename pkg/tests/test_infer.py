import numpy as np
import pytest

from idode.dataset import ParamGrid
from idode.infer import (
    AffineModelAdapter,
    InferConfig,
    best_training_init,
    infer,
    infer_batch,
    inference_loss,
)
from idode.integrate import integrate
from idode.oracle import affine_least_squares
from idode.systems import double_pendulum, lorenz

ALPHA0 = np.array([10.0, 28.0, 8 / 3])


@pytest.fixture(scope="module")
def lorenz_traj():
    return integrate(lorenz(), ALPHA0, [0, 1, 1.05], t_end=100.0, dt=0.01)


class ExactVelocityAdapter:
    """Model-interface wrapper around the true velocity field (loss-only)."""

    def __init__(self, spec):
        self.spec = spec
        self.input_split = spec.state_dim
        self.param_dim = spec.param_dim
        self.input_dim = spec.state_dim + spec.param_dim
        self.normalization = None

    def forward(self, batch):
        return self.spec.velocity(batch[:, : self.input_split], batch[:, self.input_split :])


def test_adapter_matches_velocity(lorenz_traj):
    adapter = AffineModelAdapter(lorenz())
    batch = np.concatenate(
        [lorenz_traj.states[:50], np.broadcast_to(ALPHA0, (50, 3))], axis=1
    )
    assert np.allclose(adapter.forward(batch), lorenz().velocity(lorenz_traj.states[:50], ALPHA0))


def test_adapter_requires_affine():
    with pytest.raises(ValueError, match="affine"):
        AffineModelAdapter(double_pendulum())


def test_infer_recovers_lorenz_parameters(lorenz_traj):
    # the dominant error is the forward-difference bias of the least-squares
    # optimum itself (~0.13 on rho at dt=0.01), not the descent
    adapter = AffineModelAdapter(lorenz())
    cfg = InferConfig(
        optimizer="sgd_momentum", lr=1e-4, momentum=0.99, max_iters=5000,
        batch_size=10**9, init="box_midpoint", clip_to_box=False, plateau_tol=0.0,
    )
    res = infer(adapter, lorenz_traj, cfg, param_box=lorenz().param_box)
    assert np.max(np.abs(res.alpha_hat - ALPHA0)) <= 0.2
    assert res.termination in ("max_iters", "plateau")


def test_infer_converges_to_oracle_optimum(lorenz_traj):
    # the inference loss is quadratic for the affine adapter: gradient descent
    # must land on the normal-equations solution
    alpha_star, _ = affine_least_squares(lorenz(), lorenz_traj)
    adapter = AffineModelAdapter(lorenz())
    cfg = InferConfig(
        optimizer="sgd_momentum", lr=1e-4, momentum=0.99, max_iters=20000,
        batch_size=10**9, init="box_midpoint", clip_to_box=False, plateau_tol=0.0,
    )
    res = infer(adapter, lorenz_traj, cfg, param_box=lorenz().param_box)
    assert np.max(np.abs(res.alpha_hat - alpha_star)) <= 2e-3


def test_full_batch_gd_loss_monotone(lorenz_traj):
    adapter = AffineModelAdapter(lorenz())
    cfg = InferConfig(
        optimizer="sgd_momentum", lr=1e-4, momentum=0.0, max_iters=300,
        batch_size=10**9, init="box_midpoint", clip_to_box=False, plateau_tol=0.0,
    )
    res = infer(adapter, lorenz_traj, cfg, param_box=lorenz().param_box)
    assert np.all(np.diff(res.loss_trace) <= 1e-15)


def test_gradient_stationary_at_oracle_optimum(lorenz_traj):
    from idode.infer import _loss_and_grad, _prepare

    alpha_star, _ = affine_least_squares(lorenz(), lorenz_traj)
    adapter = AffineModelAdapter(lorenz())
    xs, ys, a_shift, a_scale = _prepare(adapter, lorenz_traj)
    _, g = _loss_and_grad(adapter, xs, ys, alpha_star, a_shift, a_scale)
    assert np.linalg.norm(g) <= 1e-8


def test_loss_at_truth_beats_other_grid_points(lorenz_traj):
    adapter = AffineModelAdapter(lorenz())
    grid = ParamGrid(axes=((9, 11, 0.5), (27, 29, 0.5), (2, 4, 0.5))).points()
    losses = [inference_loss(adapter, lorenz_traj, p) for p in grid]
    best = grid[int(np.argmin(losses))]
    # closest grid point to the generating parameters wins the exhaustive scan
    truth_dist = np.linalg.norm(grid - ALPHA0, axis=1)
    assert np.array_equal(best, grid[int(np.argmin(truth_dist))])


def test_best_training_init_single_candidate(lorenz_traj):
    adapter = AffineModelAdapter(lorenz())
    only = np.array([[9.5, 27.5, 3.0]])
    assert np.array_equal(best_training_init(adapter, lorenz_traj, only), only[0])


def test_best_training_init_tie_breaks_low_index(lorenz_traj):
    adapter = AffineModelAdapter(lorenz())
    cand = np.array([[10.0, 28.0, 8 / 3], [10.0, 28.0, 8 / 3], [9.0, 27.0, 2.0]])
    got = best_training_init(adapter, lorenz_traj, cand)
    assert np.array_equal(got, cand[0])


def test_best_training_init_pendulum_grid_identifies_truth():
    # loss at the generating parameters is strictly below every other point of
    # the 0.1-spaced grid (exhaustive evaluation with the exact velocity)
    sys = double_pendulum()
    alpha_true = np.array([1.3, 1.7])
    traj = integrate(sys, alpha_true, [-44.334542, 223.53554, -1.2249799, 2.535486],
                     t_end=5.0, dt=1e-3)
    adapter = ExactVelocityAdapter(sys)
    grid = ParamGrid(axes=((1.0, 2.0, 0.1), (1.0, 2.0, 0.1))).points()
    got = best_training_init(adapter, traj, grid)
    assert np.allclose(got, alpha_true, atol=1e-12)


def test_max_iters_contract(lorenz_traj):
    with pytest.raises(ValueError, match="max_iters"):
        InferConfig(max_iters=0)
    adapter = AffineModelAdapter(lorenz())
    cfg = InferConfig(
        optimizer="sgd_momentum", lr=1e-5, momentum=0.0, max_iters=1,
        batch_size=10**9, init="box_midpoint", clip_to_box=False,
    )
    res = infer(adapter, lorenz_traj, cfg, param_box=lorenz().param_box)
    assert res.iters_used == 1
    assert res.loss_trace.shape == (1,)
    assert not np.array_equal(res.alpha_hat, res.init_used)


def test_infer_deterministic(lorenz_traj):
    adapter = AffineModelAdapter(lorenz())
    cfg = InferConfig(optimizer="sgd_momentum", lr=1e-4, momentum=0.9, max_iters=100,
                      batch_size=256, init="box_midpoint", seed=42)
    a = infer(adapter, lorenz_traj, cfg, param_box=lorenz().param_box)
    b = infer(adapter, lorenz_traj, cfg, param_box=lorenz().param_box)
    assert np.array_equal(a.alpha_hat, b.alpha_hat)
    assert np.array_equal(a.loss_trace, b.loss_trace)


def test_clip_to_box_keeps_iterates_inside(lorenz_traj):
    adapter = AffineModelAdapter(lorenz())
    box = ((9.0, 9.5), (27.0, 27.5), (2.0, 2.5))  # excludes the true parameters
    cfg = InferConfig(optimizer="sgd_momentum", lr=1e-4, momentum=0.9, max_iters=200,
                      batch_size=10**9, init="box_midpoint", clip_to_box=True)
    res = infer(adapter, lorenz_traj, cfg, param_box=box)
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    assert np.all(res.alpha_hat >= lo) and np.all(res.alpha_hat <= hi)


def test_width_mismatch_rejected(lorenz_traj):
    adapter = AffineModelAdapter(lotka := lorenz())
    bad = integrate(double_pendulum(), [1.0, 1.0], [0.1, 0.1, 0, 0], t_end=1.0, dt=0.01)
    with pytest.raises(ValueError, match="width"):
        infer(adapter, bad, InferConfig(init="box_midpoint", clip_to_box=False))


def test_infer_batch_matches_single(lorenz_traj):
    adapter = AffineModelAdapter(lorenz())
    cfg = InferConfig(optimizer="sgd_momentum", lr=1e-4, momentum=0.9, max_iters=50,
                      batch_size=512, init="box_midpoint", seed=3)
    single = infer(adapter, lorenz_traj, cfg, param_box=lorenz().param_box)
    batch = infer_batch(adapter, [lorenz_traj], cfg, param_box=lorenz().param_box)
    assert len(batch) == 1
    assert np.array_equal(batch[0].alpha_hat, single.alpha_hat)


def test_infer_batch_records_per_item_errors(lorenz_traj):
    adapter = AffineModelAdapter(lorenz())
    bad = integrate(double_pendulum(), [1.0, 1.0], [0.1, 0.1, 0, 0], t_end=1.0, dt=0.01)
    cfg = InferConfig(optimizer="sgd_momentum", lr=1e-4, momentum=0.9, max_iters=20,
                      batch_size=512, init="box_midpoint", seed=3)
    results = infer_batch(adapter, [bad, lorenz_traj], cfg, param_box=lorenz().param_box)
    assert results[0].error is not None
    assert results[1].error is None
    assert np.all(np.isfinite(results[1].alpha_hat))
