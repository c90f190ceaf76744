"""Feed-forward network with hand-rolled reverse-mode gradients.

Two gradient paths and nothing more: gradients with respect to weights (for
the learning stage) and with respect to the input rows (for descending in
parameter space during inference). Hidden layers use ReLU by default; the
softplus variant exists so finite-difference gradient checks are well-posed.

Both backward passes take the cotangent G of the network output and return
the gradient of sum(output * G); callers fold in their loss convention.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from idode._container import FormatError, read_container, write_container
from idode.dataset import Normalization

__all__ = [
    "MlpModel",
    "Optimizer",
    "init_model",
    "forward",
    "backward_weights",
    "backward_input",
    "step",
    "save_model",
    "load_model",
    "parameter_count",
]

MODEL_MAGIC = b"IDODEMDL"
MODEL_VERSION = 1

ACTIVATIONS = ("relu", "softplus")


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    # softplus, overflow-safe: log(1 + e^z) = max(z, 0) + log1p(e^{-|z|})
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        # subgradient at 0 taken as 0
        return (z > 0.0).astype(z.dtype)
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class MlpModel:
    """Weights, biases and the input split between state and parameter columns."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str
    input_split: int
    normalization: Optional[Normalization] = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.weights) != len(self.layer_dims) - 1:
            raise ValueError("weights count must be len(layer_dims) - 1")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_dims[i], self.layer_dims[i + 1])
            if w.shape != expect:
                raise ValueError(f"weight {i} has shape {w.shape}, expected {expect}")
            if b.shape != (self.layer_dims[i + 1],):
                raise ValueError(f"bias {i} has shape {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("weights must be finite")
        if not 0 < self.input_split < self.layer_dims[0]:
            raise ValueError("input_split must lie strictly inside the input width")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def param_dim(self) -> int:
        return self.layer_dims[0] - self.input_split

    def copy(self) -> "MlpModel":
        return MlpModel(
            layer_dims=list(self.layer_dims),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
            input_split=self.input_split,
            normalization=self.normalization,
        )

    def forward(self, batch: np.ndarray) -> np.ndarray:
        return forward(self, batch)

    def backward_weights(self, batch, target_grad):
        return backward_weights(self, batch, target_grad)

    def backward_input(self, batch, target_grad):
        return backward_input(self, batch, target_grad)


def parameter_count(layer_dims: list[int]) -> int:
    return sum(
        layer_dims[i] * layer_dims[i + 1] + layer_dims[i + 1]
        for i in range(len(layer_dims) - 1)
    )


def init_model(
    layer_dims: list[int],
    activation: str = "relu",
    seed: int = 0,
    input_split: Optional[int] = None,
    normalization: Optional[Normalization] = None,
) -> MlpModel:
    """He-uniform weights, zero biases, deterministic in the seed."""
    if len(layer_dims) < 3:
        raise ValueError("need at least one hidden layer")
    if any(d < 1 for d in layer_dims):
        raise ValueError("layer dims must be positive")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    if input_split is None:
        input_split = layer_dims[0] - 1
    return MlpModel(
        layer_dims=list(layer_dims),
        weights=weights,
        biases=biases,
        activation=activation,
        input_split=input_split,
        normalization=normalization,
    )


def _check_batch(model: MlpModel, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != model.input_dim:
        raise ValueError(
            f"batch must be (B, {model.input_dim}), got {batch.shape}"
        )
    return batch


def _forward_trace(model: MlpModel, batch: np.ndarray):
    """Forward pass keeping pre-activations for the backward passes."""
    pre = []
    a = batch
    post = [a]
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if i == last else _act(z, model.activation)
        post.append(a)
    return pre, post


def forward(model: MlpModel, batch: np.ndarray) -> np.ndarray:
    """Hidden layers activated, linear output layer."""
    batch = _check_batch(model, batch)
    _, post = _forward_trace(model, batch)
    return post[-1]


def backward_weights(model: MlpModel, batch, target_grad):
    """Gradient of sum(output * target_grad) w.r.t. every weight and bias.

    Returns (weight_grads, bias_grads) shaped like model.weights/biases.
    """
    batch = _check_batch(model, batch)
    target_grad = np.asarray(target_grad, dtype=float)
    if target_grad.shape != (batch.shape[0], model.output_dim):
        raise ValueError(
            f"target_grad must be (B, {model.output_dim}), got {target_grad.shape}"
        )
    pre, post = _forward_trace(model, batch)
    w_grads = [None] * len(model.weights)
    b_grads = [None] * len(model.biases)
    delta = target_grad
    for i in range(len(model.weights) - 1, -1, -1):
        w_grads[i] = post[i].T @ delta
        b_grads[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * _act_grad(pre[i - 1], model.activation)
    return w_grads, b_grads


def backward_input(model: MlpModel, batch, target_grad):
    """Per-row gradient of sum(output * target_grad) w.r.t. the input row,
    with the state columns (below input_split) masked to zero."""
    batch = _check_batch(model, batch)
    target_grad = np.asarray(target_grad, dtype=float)
    if target_grad.shape != (batch.shape[0], model.output_dim):
        raise ValueError(
            f"target_grad must be (B, {model.output_dim}), got {target_grad.shape}"
        )
    pre, _ = _forward_trace(model, batch)
    delta = target_grad
    for i in range(len(model.weights) - 1, 0, -1):
        delta = (delta @ model.weights[i].T) * _act_grad(pre[i - 1], model.activation)
    grad = delta @ model.weights[0].T
    grad[:, : model.input_split] = 0.0
    return grad


@dataclass
class Optimizer:
    """SGD with momentum (v <- mu*v + g; p <- p - lr*v) or bias-corrected Adam."""

    variant: str
    lr: float
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in ("sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer variant '{self.variant}'")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


def step(opt: Optimizer, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """One update over a list of parameter slots; optimizer state keyed by slot index."""
    if len(params) != len(grads):
        raise ValueError("params and grads must have equal length")
    out = []
    if opt.variant == "sgd_momentum":
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape:
                raise ValueError(f"slot {i}: param shape {p.shape} != grad shape {g.shape}")
            v = opt.state.setdefault(("v", i), np.zeros_like(p))
            v *= opt.momentum
            v += g
            out.append(p - opt.lr * v)
    else:
        t = opt.state.get("t", 0) + 1
        opt.state["t"] = t
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape:
                raise ValueError(f"slot {i}: param shape {p.shape} != grad shape {g.shape}")
            m = opt.state.setdefault(("m", i), np.zeros_like(p))
            v = opt.state.setdefault(("v2", i), np.zeros_like(p))
            m *= opt.beta1
            m += (1 - opt.beta1) * g
            v *= opt.beta2
            v += (1 - opt.beta2) * g * g
            m_hat = m / (1 - opt.beta1**t)
            v_hat = v / (1 - opt.beta2**t)
            out.append(p - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps))
    return out


def save_model(model: MlpModel, path) -> None:
    """Serialize to the IDODEMDL container (little-endian float64 blobs)."""
    header = {
        "layer_dims": list(model.layer_dims),
        "activation": model.activation,
        "input_split": model.input_split,
        "normalization": model.normalization.to_json_dict() if model.normalization else None,
    }
    chunks = []
    for w, b in zip(model.weights, model.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    write_container(path, MODEL_MAGIC, MODEL_VERSION, header, b"".join(chunks))


def load_model(path) -> MlpModel:
    header, payload = read_container(path, MODEL_MAGIC, MODEL_VERSION)
    dims = [int(d) for d in header["layer_dims"]]
    expected = parameter_count(dims) * 8
    if len(payload) != expected:
        raise FormatError(f"{path}: payload size {len(payload)} != expected {expected}")
    weights = []
    biases = []
    offset = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = (
            np.frombuffer(payload, dtype="<f8", count=fan_in * fan_out, offset=offset)
            .reshape(fan_in, fan_out)
            .copy()
        )
        offset += fan_in * fan_out * 8
        b = np.frombuffer(payload, dtype="<f8", count=fan_out, offset=offset).copy()
        offset += fan_out * 8
        weights.append(w)
        biases.append(b)
    norm = header.get("normalization")
    return MlpModel(
        layer_dims=dims,
        weights=weights,
        biases=biases,
        activation=header["activation"],
        input_split=int(header["input_split"]),
        normalization=Normalization.from_json_dict(norm) if norm else None,
    )
