"""Small feed-forward networks used as kernel basis functions.

Hidden layers use softplus; the output layer is softplus or linear. Gradients
are hand-written reverse mode over a batch of inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch

ACTIVATIONS = ("softplus", "linear")


def softplus(z):
    """Numerically stable log(1 + e^z)."""
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    out = np.maximum(z, 0.0)
    out += np.log1p(e)
    return out


def _softplus_and_slope(z):
    e = np.abs(z)
    np.negative(e, out=e)
    np.exp(e, out=e)
    out = np.maximum(z, 0.0)
    out += np.log1p(e)
    slope = np.where(z >= 0.0, 1.0, e)
    e += 1.0
    slope /= e
    return out, slope


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple = (32, 32)
    output_dim: int = 1
    output_activation: str = "softplus"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("all layer widths must be >= 1")
        if self.output_activation not in ACTIVATIONS:
            raise ValueError(f"output activation must be one of {ACTIVATIONS}")

    @property
    def widths(self) -> tuple:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def shapes(self) -> list:
        w = self.widths
        return [((w[i + 1], w[i]), (w[i + 1],)) for i in range(len(w) - 1)]

    @property
    def size(self) -> int:
        return sum(a * b + a for (a, b), _ in self.shapes)


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Weights ``(fan_out, fan_in)`` and biases per layer."""

    spec: MlpSpec
    weights: tuple
    biases: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.spec.shapes) or len(self.biases) != len(self.spec.shapes):
            raise DimensionMismatch("layer count does not match spec")
        for W, b, (ws, bs) in zip(self.weights, self.biases, self.spec.shapes):
            if W.shape != ws or b.shape != bs:
                raise DimensionMismatch(f"expected {ws}/{bs}, got {W.shape}/{b.shape}")

    def flatten(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    @classmethod
    def unflatten(cls, spec: MlpSpec, vec) -> "MlpParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (spec.size,):
            raise DimensionMismatch(f"expected {spec.size} parameters, got {vec.shape}")
        Ws, bs, k = [], [], 0
        for (a, b), _ in spec.shapes:
            Ws.append(vec[k:k + a * b].reshape(a, b).copy())
            k += a * b
            bs.append(vec[k:k + a].copy())
            k += a
        return cls(spec, tuple(Ws), tuple(bs))

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "MlpParams":
        return cls.unflatten(spec, np.zeros(spec.size))


def init_params(spec: MlpSpec, seed: int) -> MlpParams:
    """Glorot-uniform weights from a Philox stream, zero biases."""
    rng = np.random.Generator(np.random.Philox(seed))
    Ws, bs = [], []
    for (fan_out, fan_in), _ in spec.shapes:
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return MlpParams(spec, tuple(Ws), tuple(bs))


def _as_batch(params: MlpParams, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.ndim != 2 or X.shape[1] != params.spec.input_dim:
        raise DimensionMismatch(
            f"input dimension {X.shape[-1]} != spec input {params.spec.input_dim}"
        )
    return X, single


def forward_batch(params: MlpParams, X: np.ndarray, keep: bool = False):
    """Evaluate on rows of ``X``; with ``keep`` also return the backprop cache."""
    h = X
    cache = []
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W.T + b
        if i < last or params.spec.output_activation == "softplus":
            if keep:
                a, slope = _softplus_and_slope(z)
            else:
                a, slope = softplus(z), None
        else:
            a, slope = z, None
        if keep:
            cache.append((h, slope))
        h = a
    return (h, cache) if keep else h


def backward_batch(params: MlpParams, cache, upstream: np.ndarray):
    """Reverse pass. Returns ``(flat parameter gradient, input gradient)``."""
    g = upstream
    grads = []
    for i in range(len(params.weights) - 1, -1, -1):
        h_in, slope = cache[i]
        if slope is not None:
            g = g * slope
        grads.append((g.T @ h_in, g.sum(axis=0)))
        g = g @ params.weights[i]
    flat = np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in reversed(grads)])
    return flat, g


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    X, single = _as_batch(params, x)
    out = forward_batch(params, X)
    return out[0] if single else out


def mlp_gradient(params: MlpParams, x, upstream):
    """Gradient of ``sum(upstream * mlp_forward(params, x))``.

    Returns ``(MlpParams of parameter gradients, gradient wrt x)``.
    """
    X, single = _as_batch(params, x)
    up = np.asarray(upstream, dtype=float).reshape(X.shape[0], params.spec.output_dim)
    _, cache = forward_batch(params, X, keep=True)
    flat, gx = backward_batch(params, cache, up)
    return MlpParams.unflatten(params.spec, flat), (gx[0] if single else gx)


class MlpBasis:
    """Scalar basis function backed by an MLP with a single output.

    Inputs are multiplied by ``input_scale`` before the first layer so that
    coordinates on very different ranges (times, lags, displacements) reach
    the network at a comparable scale.
    """

    trainable = True

    def __init__(self, params: MlpParams, input_scale=1.0):
        if params.spec.output_dim != 1:
            raise DimensionMismatch("basis networks must have one output")
        self.params = params
        self.input_scale = np.broadcast_to(np.asarray(input_scale, dtype=float),
                                           (params.spec.input_dim,)).copy()

    @classmethod
    def create(cls, input_dim: int, hidden: Sequence[int], output: str, seed: int,
               input_scale=1.0) -> "MlpBasis":
        return cls(init_params(MlpSpec(input_dim, tuple(hidden), 1, output), seed), input_scale)

    @property
    def size(self) -> int:
        return self.params.spec.size

    @property
    def input_dim(self) -> int:
        return self.params.spec.input_dim

    def get_vector(self) -> np.ndarray:
        return self.params.flatten()

    def with_vector(self, vec) -> "MlpBasis":
        return MlpBasis(MlpParams.unflatten(self.params.spec, vec), self.input_scale)

    def _scaled(self, x):
        return np.asarray(x, dtype=float).reshape(-1, self.input_dim) * self.input_scale

    def __call__(self, x) -> np.ndarray:
        return forward_batch(self.params, self._scaled(x))[:, 0]

    def forward(self, X):
        out, cache = forward_batch(self.params, self._scaled(X), keep=True)
        return out[:, 0], cache

    def backward(self, cache, upstream) -> np.ndarray:
        return backward_batch(self.params, cache, np.asarray(upstream).reshape(-1, 1))[0]


class FunctionBasis:
    """Fixed closed-form basis function with no trainable parameters.

    ``antiderivative`` optionally gives ``x -> int_0^x f``, used for exact
    temporal masses of parametric kernels.
    """

    trainable = False
    size = 0

    def __init__(self, fn, input_dim: int = 1, antiderivative=None, name: str = ""):
        self.fn = fn
        self.input_dim = input_dim
        self.antiderivative = antiderivative
        self.name = name

    def get_vector(self):
        return np.zeros(0)

    def with_vector(self, vec):
        return self

    def __call__(self, x) -> np.ndarray:
        X = np.asarray(x, dtype=float).reshape(-1, self.input_dim)
        return np.asarray(self.fn(X[:, 0] if self.input_dim == 1 else X), dtype=float).reshape(-1)

    def forward(self, X):
        return self(X), None

    def backward(self, cache, upstream):
        return np.zeros(0)

    def __repr__(self):
        return f"FunctionBasis({self.name or self.fn!r})"


def constant_basis(value: float = 1.0, input_dim: int = 1) -> FunctionBasis:
    if input_dim == 1:
        return FunctionBasis(lambda x: np.full(len(x), value), 1,
                             antiderivative=lambda x: value * np.asarray(x, float),
                             name=f"const({value})")
    return FunctionBasis(lambda X: np.full(len(X), value), input_dim, name=f"const({value})")
