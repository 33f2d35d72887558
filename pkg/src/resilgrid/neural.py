"""Minimal dense feedforward kernel: forward/backward passes, inverted
dropout, squared-error loss, and plain SGD. Float64 throughout so analytic
gradients can be checked against central finite differences tightly."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "identity")

WEIGHT_FORMAT_VERSION = 1


class DivergenceError(Exception):
    """Training produced a non-finite loss (exit code 4)."""


class StaleCacheError(Exception):
    """A forward cache was reused after the stack's parameters changed."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 256
    epochs: int = 200
    dropout_rate: float = 0.2
    seed: int = 0
    momentum: float = 0.0
    finetune_epochs: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (d_in, d_out)
    bias: np.ndarray     # (d_out,)
    activation: str      # "relu" | "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def d_in(self) -> int:
        return self.weights.shape[0]

    @property
    def d_out(self) -> int:
        return self.weights.shape[1]


@dataclass
class DenseStack:
    layers: list[DenseLayer]
    version: int = 0

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.d_out != b.d_in:
                raise ValueError(
                    f"layer dims do not chain: {a.d_out} -> {b.d_in}")

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].d_in] + [l.d_out for l in self.layers]

    def n_params(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def copy(self) -> "DenseStack":
        return DenseStack(
            [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation)
             for l in self.layers])


def init_dense_stack(dims: list[int], activations: list[str],
                     rng: np.random.Generator) -> DenseStack:
    """Weights uniform in +-1/sqrt(fan_in), zero bias."""
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for d_in, d_out, act in zip(dims, dims[1:], activations):
        bound = 1.0 / np.sqrt(d_in)
        w = rng.uniform(-bound, bound, size=(d_in, d_out))
        layers.append(DenseLayer(w, np.zeros(d_out), act))
    return DenseStack(layers)


@dataclass
class ForwardCache:
    stack: DenseStack
    version: int
    inputs: list[np.ndarray]       # post-mask input of each layer
    pre_acts: list[np.ndarray]     # pre-activation of each layer
    masks: list[np.ndarray | None] = field(default_factory=list)


def _apply_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return z


def forward(stack: DenseStack, x: np.ndarray,
            dropout_masks: list[np.ndarray | None] | None = None
            ) -> tuple[np.ndarray, ForwardCache]:
    """Batched forward pass. ``dropout_masks[i]`` (if given) multiplies the
    input of layer i; rows of x are samples."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != stack.layers[0].d_in:
        raise ValueError(
            f"input dim {x.shape[1]} != stack input dim {stack.layers[0].d_in}")
    if dropout_masks is not None and len(dropout_masks) != len(stack.layers):
        raise ValueError("need one dropout mask slot per layer")
    inputs, pre_acts, used_masks = [], [], []
    h = x
    for i, layer in enumerate(stack.layers):
        mask = dropout_masks[i] if dropout_masks is not None else None
        if mask is not None:
            h = h * mask
        inputs.append(h)
        z = h @ layer.weights + layer.bias
        pre_acts.append(z)
        h = _apply_activation(z, layer.activation)
        used_masks.append(mask)
    cache = ForwardCache(stack, stack.version, inputs, pre_acts, used_masks)
    out = h[0] if squeeze else h
    return out, cache


def backward(stack: DenseStack, cache: ForwardCache,
             loss_grad: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients of a scalar loss w.r.t. every weight and bias, given
    d(loss)/d(output). ReLU passes zero gradient at exactly 0."""
    if cache.stack is not stack or cache.version != stack.version:
        raise StaleCacheError("forward cache does not match current stack state")
    g = np.asarray(loss_grad, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(stack.layers)
    for i in range(len(stack.layers) - 1, -1, -1):
        layer = stack.layers[i]
        if layer.activation == "relu":
            g = g * (cache.pre_acts[i] > 0.0)
        dw = cache.inputs[i].T @ g
        db = g.sum(axis=0)
        grads[i] = (dw, db)
        if i > 0:
            g = g @ layer.weights.T
            mask = cache.masks[i]
            if mask is not None:
                g = g * mask
    return grads


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted dropout: zeros with probability ``rate``, survivors scaled
    by 1/(1-rate) so inference needs no rescaling."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def sgd_step(stack: DenseStack, grads, learning_rate: float,
             momentum: float = 0.0, velocity=None):
    """In-place SGD update; returns the velocity state when momentum > 0."""
    if len(grads) != len(stack.layers):
        raise ValueError("gradient list does not match stack layers")
    for layer, (dw, db) in zip(stack.layers, grads):
        if dw.shape != layer.weights.shape or db.shape != layer.bias.shape:
            raise ValueError("gradient shape mismatch")
    if momentum > 0.0:
        if velocity is None:
            velocity = [(np.zeros_like(l.weights), np.zeros_like(l.bias))
                        for l in stack.layers]
        for layer, (dw, db), (vw, vb) in zip(stack.layers, grads, velocity):
            vw *= momentum
            vw += dw
            vb *= momentum
            vb += db
            layer.weights -= learning_rate * vw
            layer.bias -= learning_rate * vb
    else:
        for layer, (dw, db) in zip(stack.layers, grads):
            layer.weights -= learning_rate * dw
            layer.bias -= learning_rate * db
    stack.version += 1
    return velocity


def mse_loss(y_hat: np.ndarray, y: np.ndarray) -> float:
    """Mean over the batch of the squared L2 reconstruction norm."""
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    diff = y_hat - y
    return float(np.einsum("ij,ij->", diff, diff) / diff.shape[0])


def mse_loss_grad(y_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    return 2.0 * (y_hat - y) / y_hat.shape[0]


def finite_difference_grads(stack: DenseStack, loss_fn, eps: float = 1e-5
                            ) -> list[tuple[np.ndarray, np.ndarray]]:
    """Central finite differences of loss_fn(stack) w.r.t. every parameter.
    O(#params) loss evaluations; for gradient checking only."""
    grads = []
    for layer in stack.layers:
        dw = np.zeros_like(layer.weights)
        for idx in np.ndindex(layer.weights.shape):
            orig = layer.weights[idx]
            layer.weights[idx] = orig + eps
            up = loss_fn(stack)
            layer.weights[idx] = orig - eps
            down = loss_fn(stack)
            layer.weights[idx] = orig
            dw[idx] = (up - down) / (2.0 * eps)
        db = np.zeros_like(layer.bias)
        for idx in np.ndindex(layer.bias.shape):
            orig = layer.bias[idx]
            layer.bias[idx] = orig + eps
            up = loss_fn(stack)
            layer.bias[idx] = orig - eps
            down = loss_fn(stack)
            layer.bias[idx] = orig
            db[idx] = (up - down) / (2.0 * eps)
        grads.append((dw, db))
    return grads


def max_relative_grad_error(analytic, numeric) -> float:
    """max |a-n| / max(1, |a|, |n|) over all parameters."""
    worst = 0.0
    for (aw, ab), (nw, nb) in zip(analytic, numeric):
        for a, n in ((aw, nw), (ab, nb)):
            denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


# ---------------------------------------------------------------------------
# persistence: versioned structured text (JSON round-trips floats exactly)

def stack_to_dict(stack: DenseStack, meta: dict | None = None) -> dict:
    return {
        "format_version": WEIGHT_FORMAT_VERSION,
        "dims": stack.dims,
        "layers": [
            {
                "activation": l.activation,
                "weights": l.weights.tolist(),
                "bias": l.bias.tolist(),
            }
            for l in stack.layers
        ],
        "meta": meta or {},
    }


def stack_from_dict(data: dict) -> DenseStack:
    if data.get("format_version") != WEIGHT_FORMAT_VERSION:
        raise ValueError(
            f"unsupported weight format version {data.get('format_version')}")
    layers = [
        DenseLayer(np.asarray(l["weights"], dtype=float),
                   np.asarray(l["bias"], dtype=float),
                   l["activation"])
        for l in data["layers"]
    ]
    return DenseStack(layers)


def save_stack(stack: DenseStack, path: str, meta: dict | None = None) -> None:
    with open(path, "w") as f:
        json.dump(stack_to_dict(stack, meta), f)


def load_stack(path: str) -> DenseStack:
    with open(path) as f:
        return stack_from_dict(json.load(f))
