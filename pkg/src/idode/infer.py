"""Inference stage: descend the velocity-prediction loss in parameter space.

Given a frozen model and an unlabeled trajectory, build finite-difference
targets exactly as the dataset module does, normalize with the model's stored
statistics, and run optimizer steps on the parameter slice of the network
input only. The model is duck-typed: anything exposing `input_split`,
`param_dim`, `normalization`, `forward` and `backward_input` works, which is
how the exact-affine adapter below stands in for a trained network.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from idode.embed import EmbeddedTrajectory
from idode.integrate import Trajectory
from idode.net import Optimizer, step
from idode.systems import SystemSpec

__all__ = [
    "InferConfig",
    "InferenceResult",
    "AffineModelAdapter",
    "infer",
    "infer_batch",
    "best_training_init",
    "inference_loss",
]

AnyTrajectory = Union[Trajectory, EmbeddedTrajectory]


@dataclass
class InferConfig:
    optimizer: str = "sgd_momentum"
    lr: float = 1e-4
    momentum: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 20000
    batch_size: int = 500
    init: Union[str, Sequence[float]] = "box_midpoint"  # or "best_training_param"
    grad_tol: float = 0.0
    plateau_tol: float = 1e-10
    plateau_window: int = 200
    clip_to_box: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grad_tol < 0 or self.plateau_tol < 0:
            raise ValueError("tolerances must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def make_optimizer(self) -> Optimizer:
        return Optimizer(
            variant=self.optimizer,
            lr=self.lr,
            momentum=self.momentum,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
        )


@dataclass
class InferenceResult:
    alpha_hat: np.ndarray
    loss_trace: np.ndarray
    iters_used: int
    init_used: np.ndarray
    termination: str  # max_iters | grad_tol | plateau | diverged
    error: Optional[str] = None


class AffineModelAdapter:
    """Exact affine velocity field behind the model interface.

    Stands in for a trained network when the system is affine in its
    parameters: forward computes L(x) @ alpha + b(x) on raw (state, alpha)
    rows, and backward_input the exact parameter gradient.
    """

    def __init__(self, spec: SystemSpec):
        if not spec.is_affine:
            raise ValueError(f"system '{spec.name}' has no affine decomposition")
        self.spec = spec
        self.input_split = spec.state_dim
        self.param_dim = spec.param_dim
        self.input_dim = spec.state_dim + spec.param_dim
        self.output_dim = spec.state_dim
        self.normalization = None

    def forward(self, batch: np.ndarray) -> np.ndarray:
        states = batch[:, : self.input_split]
        alphas = batch[:, self.input_split :]
        L, b = self.spec.affine_decomposition(states)
        return np.einsum("bnm,bm->bn", L, alphas) + b

    def backward_input(self, batch: np.ndarray, target_grad: np.ndarray) -> np.ndarray:
        states = batch[:, : self.input_split]
        L, _ = self.spec.affine_decomposition(states)
        grad = np.zeros_like(batch)
        grad[:, self.input_split :] = np.einsum("bnm,bn->bm", L, target_grad)
        return grad


def _prepare(model, traj: AnyTrajectory):
    """Finite-difference targets and normalized state block for a trajectory."""
    if len(traj) < 2:
        raise ValueError("trajectory must have at least 2 points")
    state_w = traj.states.shape[1]
    if state_w + model.param_dim != model.input_dim:
        raise ValueError(
            f"trajectory width {state_w} + {model.param_dim} params != "
            f"model input width {model.input_dim}"
        )
    states = traj.states[:-1]
    targets = (traj.states[1:] - traj.states[:-1]) / traj.dt
    norm = model.normalization
    if norm is None:
        return states, targets, np.zeros(model.param_dim), np.ones(model.param_dim)
    xs = (states - norm.input_shift[:state_w]) / norm.input_scale[:state_w]
    ys = norm.normalize_targets(targets)
    return xs, ys, norm.input_shift[state_w:], norm.input_scale[state_w:]


def _assemble(model, xs, alpha, a_shift, a_scale, idx=None):
    if idx is not None:
        xs = xs[idx]
    a_norm = (alpha - a_shift) / a_scale
    return np.concatenate(
        [xs, np.broadcast_to(a_norm, (xs.shape[0], a_norm.size))], axis=1
    )


def _loss(model, xs, ys, alpha, a_shift, a_scale, idx=None):
    batch = _assemble(model, xs, alpha, a_shift, a_scale, idx)
    resid = model.forward(batch) - (ys if idx is None else ys[idx])
    return float(np.mean(resid * resid))


def _loss_and_grad(model, xs, ys, alpha, a_shift, a_scale, idx=None):
    """Loss and d(loss)/d(alpha) (raw units) on the selected rows."""
    batch = _assemble(model, xs, alpha, a_shift, a_scale, idx)
    resid = model.forward(batch) - (ys if idx is None else ys[idx])
    loss = float(np.mean(resid * resid))
    g_out = (2.0 / (resid.shape[0] * resid.shape[1])) * resid
    g_in = model.backward_input(batch, g_out)
    g_alpha = g_in[:, model.input_split :].sum(axis=0) / a_scale
    return loss, g_alpha


def inference_loss(model, traj: AnyTrajectory, alpha) -> float:
    """Full-batch inference loss at a fixed parameter value."""
    xs, ys, a_shift, a_scale = _prepare(model, traj)
    return _loss(model, xs, ys, np.asarray(alpha, dtype=float), a_shift, a_scale)


def best_training_init(model, traj: AnyTrajectory, train_params) -> np.ndarray:
    """Training-set parameter with the lowest full-batch loss; ties -> lowest index."""
    candidates = np.atleast_2d(np.asarray(train_params, dtype=float))
    if candidates.shape[0] == 0:
        raise ValueError("candidate list is empty")
    xs, ys, a_shift, a_scale = _prepare(model, traj)
    losses = [_loss(model, xs, ys, cand, a_shift, a_scale) for cand in candidates]
    return candidates[int(np.argmin(losses))].copy()


def _resolve_init(model, traj, cfg, param_box, train_params) -> np.ndarray:
    if isinstance(cfg.init, str):
        if cfg.init == "box_midpoint":
            if param_box is None:
                raise ValueError("box_midpoint initialization needs param_box")
            return np.array([(lo + hi) / 2.0 for lo, hi in param_box])
        if cfg.init == "best_training_param":
            if train_params is None:
                raise ValueError("best_training_param initialization needs train_params")
            return best_training_init(model, traj, train_params)
        raise ValueError(f"unknown init strategy '{cfg.init}'")
    alpha0 = np.asarray(cfg.init, dtype=float).reshape(-1)
    if alpha0.size != model.param_dim:
        raise ValueError(f"explicit init has size {alpha0.size}, expected {model.param_dim}")
    return alpha0


def infer(
    model,
    traj: AnyTrajectory,
    cfg: InferConfig,
    param_box=None,
    train_params=None,
) -> InferenceResult:
    """Estimate the parameters of one unlabeled trajectory."""
    xs, ys, a_shift, a_scale = _prepare(model, traj)
    alpha = _resolve_init(model, traj, cfg, param_box, train_params)
    init_used = alpha.copy()
    if cfg.clip_to_box:
        if param_box is None:
            raise ValueError("clip_to_box needs param_box")
        lo = np.array([b[0] for b in param_box])
        hi = np.array([b[1] for b in param_box])

    rng = np.random.default_rng(cfg.seed)
    opt = cfg.make_optimizer()
    n_rows = xs.shape[0]
    full_batch = cfg.batch_size >= n_rows
    trace = np.empty(cfg.max_iters)
    termination = "max_iters"
    iters = 0
    best = np.inf
    since_best = 0

    for j in range(cfg.max_iters):
        idx = None if full_batch else rng.integers(0, n_rows, size=cfg.batch_size)
        loss, g_alpha = _loss_and_grad(model, xs, ys, alpha, a_shift, a_scale, idx)
        trace[j] = loss
        iters = j + 1
        if not np.isfinite(loss) or not np.all(np.isfinite(g_alpha)):
            termination = "diverged"
            break
        (alpha,) = step(opt, [alpha], [g_alpha])
        if cfg.clip_to_box:
            alpha = np.clip(alpha, lo, hi)
        if cfg.grad_tol > 0 and float(np.linalg.norm(g_alpha)) <= cfg.grad_tol:
            termination = "grad_tol"
            break
        # plateau: no relative improvement over the trailing window
        if loss < best * (1.0 - cfg.plateau_tol):
            best = loss
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.plateau_window:
                termination = "plateau"
                break

    return InferenceResult(
        alpha_hat=alpha,
        loss_trace=trace[:iters].copy(),
        iters_used=iters,
        init_used=init_used,
        termination=termination,
    )


def infer_batch(
    model,
    trajs: Sequence[AnyTrajectory],
    cfg: InferConfig,
    param_box=None,
    train_params=None,
) -> list[InferenceResult]:
    """Independent per-trajectory inference; per-item failures are recorded."""
    results = []
    for traj in trajs:
        try:
            results.append(infer(model, traj, cfg, param_box, train_params))
        except (ValueError, RuntimeError) as exc:
            results.append(
                InferenceResult(
                    alpha_hat=np.full(model.param_dim, np.nan),
                    loss_trace=np.empty(0),
                    iters_used=0,
                    init_used=np.full(model.param_dim, np.nan),
                    termination="diverged",
                    error=str(exc),
                )
            )
    return results
