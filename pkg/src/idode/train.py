"""Learning stage: fit the network to finite-difference velocity targets.

Minimizes the mean squared error between model output and targets over
seeded-shuffle minibatches. The mean is over batch rows and output
dimensions, so reported losses are comparable across systems and batch
sizes. `epochs` counts gradient steps by default ("steps"); set
epoch_units="sweeps" to count full passes over the training rows.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from idode.dataset import SupervisedSet
from idode.net import MlpModel, Optimizer, backward_weights, forward, step

__all__ = ["TrainConfig", "TrainReport", "DivergenceError", "train", "train_loss"]


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, lr: float):
        super().__init__(f"non-finite training loss at step {epoch} (lr={lr:g})")
        self.epoch = epoch
        self.lr = lr


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 500
    epochs: int = 5000
    seed: int = 0
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_fraction: float = 0.05
    early_stop_patience: Optional[int] = None
    epoch_units: str = "steps"  # "steps" = gradient steps, "sweeps" = data passes
    log_every: Optional[int] = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.eval_fraction < 1:
            raise ValueError("eval_fraction must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epoch_units not in ("steps", "sweeps"):
            raise ValueError("epoch_units must be 'steps' or 'sweeps'")

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
class TrainReport:
    steps: np.ndarray
    train_curve: np.ndarray
    holdout_curve: np.ndarray
    final_train_loss: float
    final_holdout_loss: float
    wall_time: float
    config: dict = field(default_factory=dict)

    def curve_rows(self):
        return zip(self.steps.tolist(), self.train_curve.tolist(), self.holdout_curve.tolist())


def _mse_chunked(model: MlpModel, inputs: np.ndarray, targets: np.ndarray, chunk: int = 65536) -> float:
    total = 0.0
    for start in range(0, inputs.shape[0], chunk):
        resid = forward(model, inputs[start : start + chunk]) - targets[start : start + chunk]
        total += float(np.sum(resid * resid))
    return total / (inputs.shape[0] * targets.shape[1])


def train_loss(model: MlpModel, data: SupervisedSet) -> float:
    """Mean over rows and output dims of the squared residual."""
    if data.input_dim != model.input_dim:
        raise ValueError(
            f"data width {data.input_dim} != model input width {model.input_dim}"
        )
    return _mse_chunked(model, data.inputs, data.targets)


def train(model: MlpModel, data: SupervisedSet, cfg: TrainConfig) -> tuple[MlpModel, TrainReport]:
    """Run the configured number of minibatch steps; returns a new model.

    The input model is not mutated; its normalization slot is filled from the
    data when empty so checkpoints carry the transforms used in training.
    """
    if len(data) == 0:
        raise ValueError("supervised set is empty")
    if data.input_dim != model.input_dim:
        raise ValueError(
            f"data width {data.input_dim} != model input width {model.input_dim}"
        )
    model = model.copy()
    if model.normalization is None:
        model.normalization = data.normalization

    t_start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    n_eval = int(round(cfg.eval_fraction * n))
    perm = rng.permutation(n)
    eval_idx = perm[:n_eval]
    train_idx = perm[n_eval:]
    if train_idx.size == 0:
        raise ValueError("eval_fraction leaves no training rows")

    steps_per_sweep = int(np.ceil(train_idx.size / cfg.batch_size))
    total = cfg.epochs if cfg.epoch_units == "steps" else cfg.epochs * steps_per_sweep
    log_every = cfg.log_every or max(1, total // 200)

    opt = cfg.make_optimizer()
    nw = len(model.weights)
    d_out = data.target_dim
    order = rng.permutation(train_idx)
    cursor = 0
    rec_steps: list[int] = []
    rec_train: list[float] = []
    rec_holdout: list[float] = []
    best_holdout = np.inf
    stale = 0

    for it in range(1, total + 1):
        if cursor + cfg.batch_size > order.size:
            order = rng.permutation(train_idx)
            cursor = 0
        idx = order[cursor : cursor + cfg.batch_size]
        cursor += cfg.batch_size
        xb = data.inputs[idx]
        yb = data.targets[idx]
        out = forward(model, xb)
        resid = out - yb
        with np.errstate(over="ignore"):  # overflow to inf is the divergence signal
            loss = float(np.mean(resid * resid))
        if not np.isfinite(loss):
            raise DivergenceError(it, cfg.lr)
        g_out = (2.0 / (resid.shape[0] * d_out)) * resid
        w_grads, b_grads = backward_weights(model, xb, g_out)
        updated = step(opt, model.weights + model.biases, w_grads + b_grads)
        model.weights = updated[:nw]
        model.biases = updated[nw:]

        if it % log_every == 0 or it == total:
            holdout = (
                _mse_chunked(model, data.inputs[eval_idx], data.targets[eval_idx])
                if n_eval
                else float("nan")
            )
            rec_steps.append(it)
            rec_train.append(loss)
            rec_holdout.append(holdout)
            if cfg.early_stop_patience is not None and n_eval:
                if holdout < best_holdout:
                    best_holdout = holdout
                    stale = 0
                else:
                    stale += 1
                    if stale >= cfg.early_stop_patience:
                        break

    report = TrainReport(
        steps=np.array(rec_steps, dtype=int),
        train_curve=np.array(rec_train),
        holdout_curve=np.array(rec_holdout),
        final_train_loss=rec_train[-1] if rec_train else float("nan"),
        final_holdout_loss=rec_holdout[-1] if rec_holdout else float("nan"),
        wall_time=time.perf_counter() - t_start,
        config=asdict(cfg),
    )
    return model, report
