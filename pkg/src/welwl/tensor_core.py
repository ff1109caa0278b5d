"""Dense float64 arithmetic, activations and shallow layers.

Matrices are 2-D ``float64`` arrays and edge tensors are ``(n, n, D)`` arrays
with the channel axis last.  Matrix products go through a compiled cubic
kernel whose summation order is fixed (``k`` innermost, ascending), so every
entry equals the naive triple loop bit for bit and runs are reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "ShapeError",
    "ActivationKind",
    "DenseLayer",
    "ANALYTIC_KINDS",
    "ACTIVATION_NAMES",
    "as_matrix",
    "as_edge_tensor",
    "matmul",
    "channel_matmul",
    "hadamard",
    "activate",
    "activate_array",
    "activation_derivative",
    "layer_forward",
    "ordered_sum",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got array of shape {m.shape}")
    return m


def as_edge_tensor(a) -> np.ndarray:
    e = np.asarray(a, dtype=np.float64)
    if e.ndim != 3 or e.shape[0] != e.shape[1]:
        raise ShapeError(f"expected an (n, n, D) edge tensor, got shape {e.shape}")
    return e


# ---------------------------------------------------------------------------
# products


@njit(cache=True)
def _batched_matmul(a, bt, out):
    # a[d, i, k], bt[d, j, k] -> out[i, j, d]; strict sequential k sum.
    nd, ni, nk = a.shape
    nj = bt.shape[1]
    for d in range(nd):
        for i in range(ni):
            for j in range(nj):
                acc = 0.0
                for k in range(nk):
                    acc += a[d, i, k] * bt[d, j, k]
                out[i, j, d] = acc
    return out


def matmul(a, b) -> np.ndarray:
    """Cubic reference product ``a @ b`` with a fixed summation order."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = np.empty((a.shape[0], b.shape[1], 1))
    _batched_matmul(
        np.ascontiguousarray(a[None]),
        np.ascontiguousarray(b.T[None]),
        out,
    )
    return out[:, :, 0]


def channel_matmul(a, b) -> np.ndarray:
    """Channelwise products of two ``(n, n, D)`` tensors.

    ``out[:, :, d] = a[:, :, d] @ b[:, :, d]`` for every channel ``d``; the
    channels are independent products computed by the same kernel as
    :func:`matmul`.
    """
    a = as_edge_tensor(a)
    b = as_edge_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"channel_matmul: shapes differ, {a.shape} vs {b.shape}")
    n, _, d = a.shape
    out = np.empty((n, n, d))
    _batched_matmul(
        np.ascontiguousarray(a.transpose(2, 0, 1)),
        np.ascontiguousarray(b.transpose(2, 1, 0)),
        out,
    )
    return out


def hadamard(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes differ, {a.shape} vs {b.shape}")
    return a * b


@njit(cache=True)
def _ordered_rows_sum(x):
    m, d = x.shape
    out = np.zeros(d)
    for r in range(m):
        for c in range(d):
            out[c] += x[r, c]
    return out


def ordered_sum(x) -> np.ndarray:
    """Sum the rows of a 2-D array in ascending row order."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"ordered_sum expects a 2-D array, got {x.shape}")
    return _ordered_rows_sum(x)


# ---------------------------------------------------------------------------
# activations

ACTIVATION_NAMES = (
    "relu",
    "leaky_relu",
    "softplus",
    "scaled_softplus",
    "elu",
    "leaky_elu",
    "tanh",
    "sigmoid",
)
ANALYTIC_KINDS = ("softplus", "scaled_softplus", "elu", "leaky_elu", "tanh", "sigmoid")
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class ActivationKind:
    """An elementwise nonlinearity.

    ``alpha`` is only read by ``leaky_relu`` and ``leaky_elu``.
    ``scaled_softplus`` is ``softplus(x) - ln 2`` (zero at the origin).
    """

    name: str = "softplus"
    alpha: float = 0.01

    def __post_init__(self):
        if self.name not in ACTIVATION_NAMES:
            raise ValueError(f"unknown activation {self.name!r}; choose from {ACTIVATION_NAMES}")

    @property
    def analytic(self) -> bool:
        return self.name in ANALYTIC_KINDS

    def to_dict(self) -> dict:
        return {"name": self.name, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "ActivationKind":
        return cls(d["name"], float(d.get("alpha", 0.01)))

    @classmethod
    def parse(cls, spec: "str | ActivationKind") -> "ActivationKind":
        """Accept ``"leaky_elu"`` or ``"leaky_elu:0.1"`` style strings."""
        if isinstance(spec, ActivationKind):
            return spec
        name, _, alpha = spec.partition(":")
        return cls(name, float(alpha)) if alpha else cls(name)


def _softplus(x):
    # log(1 + e^x) = max(x, 0) + log1p(e^-|x|): no overflow, full relative accuracy
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _elu(x):
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0)))


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def activate_array(kind: ActivationKind, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    name = kind.name
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "leaky_relu":
        return np.where(x >= 0, x, kind.alpha * x)
    if name == "softplus":
        return _softplus(x)
    if name == "scaled_softplus":
        return _softplus(x) - _LN2
    if name == "elu":
        return _elu(x)
    if name == "leaky_elu":
        return _elu(x) - kind.alpha * _softplus(-x)
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return _sigmoid(x)
    raise AssertionError(name)


def activate(kind: ActivationKind, x: float) -> float:
    return float(activate_array(kind, x))


def activation_derivative(kind: ActivationKind, x):
    """Closed-form derivative (one-sided value 1 at the ReLU/ELU kink)."""
    x = np.asarray(x, dtype=np.float64)
    name = kind.name
    if name == "relu":
        return (x > 0).astype(np.float64)
    if name == "leaky_relu":
        return np.where(x >= 0, 1.0, kind.alpha)
    if name in ("softplus", "scaled_softplus"):
        return _sigmoid(x)
    if name == "elu":
        return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))
    if name == "leaky_elu":
        return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0))) + kind.alpha * _sigmoid(-x)
    if name == "tanh":
        return 1.0 - np.tanh(x) ** 2
    if name == "sigmoid":
        s = _sigmoid(x)
        return s * (1.0 - s)
    raise AssertionError(name)


# ---------------------------------------------------------------------------
# layers


@dataclass(frozen=True)
class DenseLayer:
    """``rho(W x + b)`` applied along the last axis."""

    weight: np.ndarray
    bias: np.ndarray
    activation: ActivationKind = ActivationKind()

    def __post_init__(self):
        w = as_matrix(self.weight)
        b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if b.shape[0] != w.shape[0]:
            raise ShapeError(f"bias length {b.shape[0]} does not match weight {w.shape}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"layer expects input width {self.d_in}, got shape {x.shape}")
        return activate_array(self.activation, x @ self.weight.T + self.bias)

    def to_dict(self) -> dict:
        return {
            "shape": list(self.weight.shape),
            "weight": self.weight.tolist(),
            "bias": self.bias.tolist(),
            "activation": self.activation.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenseLayer":
        w = np.array(d["weight"], dtype=np.float64).reshape(d["shape"])
        return cls(w, np.array(d["bias"], dtype=np.float64), ActivationKind.from_dict(d["activation"]))

    @classmethod
    def gaussian(cls, rng: np.random.Generator, d_in: int, d_out: int,
                 activation: ActivationKind, std: float = 1.0, bias_std: float = 1.0) -> "DenseLayer":
        return cls(
            rng.standard_normal((d_out, d_in)) * std,
            rng.standard_normal(d_out) * bias_std,
            activation,
        )


def layer_forward(layer: DenseLayer, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"layer_forward expects a vector, got shape {x.shape}")
    return layer(x)
