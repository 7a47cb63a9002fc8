"""Minimal dense networks with hand-rolled backprop and Adam.

Everything runs at 64-bit so the whole layer/activation/loss set can be
checked against central finite differences.  A network under training is
single-owner mutable; a frozen network is safe to read concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("linear", "elu", "tanh", "sigmoid", "softmax")

_BCE_EPS = 1e-12


class ShapeError(ValueError):
    """Input width or parameter shape does not match the network."""


def activate(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "linear":
        return z
    if tag == "elu":
        out = z.copy()
        neg = z <= 0
        out[neg] = np.expm1(z[neg])
        return out
    if tag == "tanh":
        return np.tanh(z)
    if tag == "sigmoid":
        # split by sign for numerical stability
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if tag == "softmax":
        shifted = z - z.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown activation {tag!r}")


def activation_grad(tag: str, z: np.ndarray, a: np.ndarray,
                    grad_a: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. pre-activation z given grad w.r.t. activation a."""
    if tag == "linear":
        return grad_a
    if tag == "elu":
        return grad_a * np.where(z > 0, 1.0, a + 1.0)
    if tag == "tanh":
        return grad_a * (1.0 - a * a)
    if tag == "sigmoid":
        return grad_a * a * (1.0 - a)
    if tag == "softmax":
        inner = (grad_a * a).sum(axis=-1, keepdims=True)
        return a * (grad_a - inner)
    raise ValueError(f"unknown activation {tag!r}")


@dataclass
class Dense:
    """One dense layer: y = act(W x + b). W has shape (out, in)."""

    w: np.ndarray
    b: np.ndarray
    act: str = "linear"

    def __post_init__(self):
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ShapeError("weight/bias shapes inconsistent")


@dataclass
class DenseNetwork:
    layers: list[Dense] = field(default_factory=list)

    @classmethod
    def create(cls, widths: list[int], activations: list[str],
               rng: np.random.Generator) -> "DenseNetwork":
        """Glorot-uniform initialised network with the given layer widths.

        widths has len(activations) + 1 entries; layer i maps widths[i]
        to widths[i + 1].
        """
        if len(widths) != len(activations) + 1:
            raise ShapeError("widths must have one more entry than activations")
        layers = []
        for fan_in, fan_out, act in zip(widths, widths[1:], activations):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-lim, lim, size=(fan_out, fan_in))
            b = np.zeros(fan_out)
            layers.append(Dense(w, b, act))
        return cls(layers)

    @property
    def width_in(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def width_out(self) -> int:
        return self.layers[-1].w.shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.w)
            out.append(layer.b)
        return out

    def copy(self) -> "DenseNetwork":
        return DenseNetwork(
            [Dense(l.w.copy(), l.b.copy(), l.act) for l in self.layers])

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Forward pass; returns (output, cache) for a later backward().

        x may be (n,) or batched (B, n); the output matches.
        """
        squeeze = x.ndim == 1
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if h.shape[1] != self.width_in:
            raise ShapeError(
                f"input width {h.shape[1]} != network width {self.width_in}")
        cache = [h]
        for layer in self.layers:
            z = h @ layer.w.T + layer.b
            h = activate(layer.act, z)
            cache.append(z)
            cache.append(h)
        out = h[0] if squeeze else h
        return out, cache

    def backward(self, cache: list, grad_out: np.ndarray
                 ) -> tuple[list[np.ndarray], np.ndarray]:
        """Backprop grad_out through the cached forward pass.

        Returns (param_grads, grad_input); param_grads aligns with
        params().  Parameter gradients sum over the batch dimension.
        """
        grad = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            x_in = cache[2 * i]
            z = cache[2 * i + 1]
            a = cache[2 * i + 2]
            gz = activation_grad(layer.act, z, a, grad)
            grads[2 * i] = gz.T @ x_in
            grads[2 * i + 1] = gz.sum(axis=0)
            grad = gz @ layer.w
        return grads, grad


def mse_loss(pred: np.ndarray, target: np.ndarray,
             mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient w.r.t. pred.

    With a mask (same shape, 0/1) the mean runs over unmasked entries
    only and masked entries receive zero gradient.
    """
    diff = pred - target
    if mask is not None:
        diff = diff * mask
        count = float(mask.sum())
    else:
        count = float(diff.size)
    if count == 0:
        return 0.0, np.zeros_like(diff)
    loss = float((diff * diff).sum() / count)
    return loss, 2.0 * diff / count


def bce_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Binary cross-entropy over probabilities in (0, 1)."""
    p = np.clip(pred, _BCE_EPS, 1.0 - _BCE_EPS)
    n = float(p.size)
    loss = float(-(target * np.log(p) + (1.0 - target) * np.log1p(-p)).sum() / n)
    grad = (p - target) / (p * (1.0 - p)) / n
    return loss, grad


class Adam:
    """Adam optimiser with bias correction.

    Keeps first/second moment accumulators shaped like the parameters and
    a step counter; update rule p -= lr * m_hat / (sqrt(v_hat) + eps).
    """

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if len(params) != len(self.m):
            raise ShapeError("parameter list does not match optimiser state")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ShapeError("gradient shape does not match parameter")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def check_finite(arrays: list[np.ndarray]) -> bool:
    """True when every array is fully finite; used as a divergence guard."""
    return all(np.isfinite(a).all() for a in arrays)
