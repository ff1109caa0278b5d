"""Point clouds, position-velocity pairs and their weighted-graph encodings.

Clouds are stored point-major: ``x[i]`` is the 3-vector of point ``i`` and
arrays have shape ``(n, 3)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .wl import WLGraph

__all__ = [
    "PointCloud",
    "PosVel",
    "EuclideanMotion",
    "PermutationMap",
    "QuantizationError",
    "POSVEL_CHANNELS",
    "centralize",
    "encode_positions",
    "encode_posvel",
    "apply_motion",
    "compose",
    "random_motion",
    "random_permutation",
    "quantize_tensor",
]

POSVEL_CHANNELS = ("d(xi,xj)", "d(xi,vi)", "d(xi,vj)", "d(xj,vi)", "d(xj,vj)", "d(vi,vj)")


class QuantizationError(ValueError):
    pass


def _points(a, what: str) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{what} must have shape (n, 3), got {a.shape}")
    if a.shape[0] == 0:
        raise ValueError(f"{what} must contain at least one point")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} has non-finite coordinates")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _points(self.x, "positions"))

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class PosVel:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = _points(self.x, "positions")
        v = _points(self.v, "velocities")
        if x.shape != v.shape:
            raise ValueError(f"positions {x.shape} and velocities {v.shape} disagree on n")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def to_dict(self) -> dict:
        return {"n": self.n, "X": self.x.tolist(), "V": self.v.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PosVel":
        x = np.asarray(d["X"], dtype=np.float64)
        v = np.asarray(d["V"], dtype=np.float64) if d.get("V") is not None else np.zeros_like(x)
        if "n" in d and int(d["n"]) != x.shape[0]:
            raise ValueError(f"declared n={d['n']} but {x.shape[0]} positions given")
        return cls(x, v)


@dataclass(frozen=True)
class EuclideanMotion:
    """``x -> R x + t`` with ``R`` orthogonal (proper or improper)."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"R must be 3x3, got {R.shape}")
        err = np.linalg.norm(R.T @ R - np.eye(3))
        if err > 1e-12:
            raise ValueError(f"R is not orthogonal (|R^T R - I|_F = {err:.3e})")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "EuclideanMotion":
        return cls(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class PermutationMap:
    """New index ``i`` takes old index ``perm[i]``."""

    perm: np.ndarray

    def __post_init__(self):
        p = np.array(self.perm, dtype=np.int64).reshape(-1)
        if not np.array_equal(np.sort(p), np.arange(p.size)):
            raise ValueError("permutation is not a bijection on [n]")
        p.setflags(write=False)
        object.__setattr__(self, "perm", p)

    @property
    def n(self) -> int:
        return self.perm.size

    @classmethod
    def identity(cls, n: int) -> "PermutationMap":
        return cls(np.arange(n))

    def apply_to_tensor(self, e: np.ndarray) -> np.ndarray:
        return e[np.ix_(self.perm, self.perm)]


def centralize(cloud) -> np.ndarray:
    """Subtract the barycentre from every point."""
    x = cloud.x if isinstance(cloud, (PointCloud, PosVel)) else _points(cloud, "positions")
    return x - x.mean(axis=0)


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # ||a_i - b_j|| from explicit differences (no Gram trick: exact zeros stay zero)
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))


def encode_positions(cloud) -> np.ndarray:
    x = cloud.x if isinstance(cloud, (PointCloud, PosVel)) else _points(cloud, "positions")
    return _pairwise(x, x)[:, :, None]


def encode_posvel(xv: PosVel) -> tuple[np.ndarray, np.ndarray]:
    """Six-channel pair encoding of a centred position-velocity pair.

    Off-diagonal ``(i, j)`` holds the upper triangle of the 4x4 distance matrix
    of ``(x_i, x_j, v_i, v_j)`` in the order of :data:`POSVEL_CHANNELS`.  The
    diagonal holds ``|v_i|`` in channel 0 and zeros elsewhere.  The second
    return value is the per-node vector of ``|v_i|``.
    """
    x = centralize(xv)
    v = xv.v
    n = xv.n
    dxx = _pairwise(x, x)
    dxv = _pairwise(x, v)  # dxv[i, j] = |x_i - v_j|
    dvv = _pairwise(v, v)
    e = np.stack([dxx, np.broadcast_to(np.diag(dxv)[:, None], (n, n)), dxv, dxv.T,
                  np.broadcast_to(np.diag(dxv)[None, :], (n, n)), dvv], axis=-1)
    speed = np.linalg.norm(v, axis=1)
    idx = np.arange(n)
    e[idx, idx, :] = 0.0
    e[idx, idx, 0] = speed
    return e, speed


def apply_motion(m: EuclideanMotion, tau: PermutationMap, xv):
    """``x'_i = R x_tau(i) + t`` and ``v'_i = R v_tau(i)`` (velocities are not translated)."""
    if isinstance(xv, PointCloud):
        return PointCloud(xv.x[tau.perm] @ m.R.T + m.t)
    if tau.n != xv.n:
        raise ValueError(f"permutation of size {tau.n} applied to {xv.n} points")
    return PosVel(xv.x[tau.perm] @ m.R.T + m.t, xv.v[tau.perm] @ m.R.T)


def compose(second: tuple[EuclideanMotion, PermutationMap],
            first: tuple[EuclideanMotion, PermutationMap]) -> tuple[EuclideanMotion, PermutationMap]:
    """Group element equal to applying ``first`` and then ``second``."""
    m2, p2 = second
    m1, p1 = first
    m = EuclideanMotion(m2.R @ m1.R, m2.R @ m1.t + m2.t)
    return m, PermutationMap(p1.perm[p2.perm])


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def random_motion(seed) -> EuclideanMotion:
    """Haar-random orthogonal matrix (improper with probability 1/2) plus Gaussian shift."""
    rng = _rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if rng.random() < 0.5:
        q = -q
    # one Newton polish step so |Q^T Q - I| sits at the rounding floor
    q = 1.5 * q - 0.5 * q @ q.T @ q
    return EuclideanMotion(q, rng.standard_normal(3))


def random_permutation(seed, n: int) -> PermutationMap:
    return PermutationMap(_rng(seed).permutation(n))


def quantize_tensor(e, grid: float = 1e-9) -> WLGraph:
    """Round every entry to a multiple of ``grid`` and pack pairs as bytes.

    The pair key is the little-endian int64 encoding of ``round(f / grid)``
    for each channel in order.  The tensor itself is kept as the numeric view.
    """
    if not grid > 0:
        raise ValueError(f"grid must be positive, got {grid}")
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 3 or e.shape[0] != e.shape[1]:
        raise ValueError(f"expected an (n, n, D) tensor, got {e.shape}")
    q = np.rint(e / grid)
    if not np.all(np.abs(q) < 2.0 ** 63):
        raise QuantizationError(
            f"value of magnitude {np.max(np.abs(e)):.3e} overflows int64 at grid {grid:g}")
    q = q.astype("<i8")
    n = e.shape[0]
    feats = tuple(q[i, j].tobytes() for i in range(n) for j in range(n))
    return WLGraph(n, feats, e)
