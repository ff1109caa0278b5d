"""Synthetic inputs: WL-hard cycle pairs, random clouds and N-body trajectories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import PosVel, apply_motion, random_motion, random_permutation
from ..wl import WLGraph

__all__ = [
    "cycle_adjacency",
    "gen_cycle_pair",
    "gen_random_posvel",
    "gen_equivalent_pair",
    "gen_perturbed_pair",
    "Trajectory",
    "SOFTENING",
    "coulomb_forces",
    "potential_energy",
    "simulate_nbody",
]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def cycle_adjacency(sizes) -> np.ndarray:
    """Adjacency of a disjoint union of cycles with the given lengths."""
    n = sum(sizes)
    a = np.zeros((n, n), dtype=np.int64)
    start = 0
    for k in sizes:
        for i in range(k):
            u, v = start + i, start + (i + 1) % k
            a[u, v] = a[v, u] = 1
        start += k
    return a


def gen_cycle_pair(k: int) -> tuple[WLGraph, WLGraph]:
    """``(C_2k, C_k + C_k)``: both 2-regular on ``2k`` nodes, so 1-WL cannot tell them apart."""
    if k < 3:
        raise ValueError(f"cycle pairs need k >= 3, got {k}")
    return WLGraph.from_adjacency(cycle_adjacency([2 * k])), WLGraph.from_adjacency(cycle_adjacency([k, k]))


def gen_random_posvel(seed, n: int, scale: float = 1.0) -> PosVel:
    rng = _rng(seed)
    return PosVel(rng.standard_normal((n, 3)) * scale, rng.standard_normal((n, 3)) * scale)


def gen_equivalent_pair(seed, n: int, scale: float = 1.0) -> tuple[PosVel, PosVel]:
    """A random cloud and its image under a random motion and relabelling."""
    rng = _rng(seed)
    xv = gen_random_posvel(rng, n, scale)
    return xv, apply_motion(random_motion(rng), random_permutation(rng, n), xv)


def gen_perturbed_pair(seed, n: int, eps: float = 1e-3, scale: float = 1.0) -> tuple[PosVel, PosVel]:
    """A random cloud and a copy with one position coordinate moved by ``eps``."""
    rng = _rng(seed)
    xv = gen_random_posvel(rng, n, scale)
    x = xv.x.copy()
    x[rng.integers(n), rng.integers(3)] += eps
    return xv, PosVel(x, xv.v)


# ---------------------------------------------------------------------------
# charged N-body system

SOFTENING = 1e-2


@dataclass(frozen=True)
class Trajectory:
    """Positions and velocities at every step, ``(steps + 1, n, 3)`` each."""

    x: np.ndarray
    v: np.ndarray
    charges: np.ndarray
    dt: float
    energy: np.ndarray

    @property
    def steps(self) -> int:
        return self.x.shape[0] - 1

    @property
    def initial(self) -> PosVel:
        return PosVel(self.x[0], self.v[0])

    @property
    def target(self) -> np.ndarray:
        return self.x[-1]

    @property
    def energy_drift(self) -> float:
        """Largest relative deviation of the total energy from its start value."""
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / max(abs(e0), 1e-300))

    def momentum(self) -> np.ndarray:
        """Total momentum (unit masses) at every step, ``(steps + 1, 3)``."""
        return self.v.sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "n": int(self.x.shape[1]), "steps": self.steps, "dt": self.dt,
            "charges": self.charges.tolist(), "X0": self.x[0].tolist(), "V0": self.v[0].tolist(),
            "X_final": self.target.tolist(), "energy_drift": self.energy_drift,
            "momentum_drift": float(np.max(np.abs(self.momentum() - self.momentum()[0]))),
        }


def coulomb_forces(x: np.ndarray, q: np.ndarray, softening: float = SOFTENING) -> np.ndarray:
    """``F_i = sum_j q_i q_j (x_i - x_j) / (|x_i - x_j| + delta)^3``.

    Pair terms are computed once and added with opposite signs, so the total
    force cancels up to rounding.
    """
    n = x.shape[0]
    f = np.zeros_like(x)
    for i in range(n):
        for j in range(i + 1, n):
            d = x[i] - x[j]
            r = np.sqrt(d @ d)
            fij = q[i] * q[j] * d / (r + softening) ** 3
            f[i] += fij
            f[j] -= fij
    return f


def potential_energy(x: np.ndarray, q: np.ndarray, softening: float = SOFTENING) -> float:
    # U(r) = q_i q_j (1/(r+d) - d/(2(r+d)^2)) has -dU/dr equal to the force magnitude above
    u = 0.0
    n = x.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            s = np.linalg.norm(x[i] - x[j]) + softening
            u += q[i] * q[j] * (1.0 / s - softening / (2.0 * s * s))
    return float(u)


def simulate_nbody(seed, n: int = 5, steps: int = 1000, dt: float = 1e-3, box: float = 1.0,
                   charges=None, x0=None, v0=None, vel_std: float = 0.5,
                   softening: float = SOFTENING) -> Trajectory:
    """Kick-drift-kick leapfrog with unit masses.

    Initial positions are uniform in ``[-box, box]^3``, velocities Gaussian
    with std ``vel_std`` and charges uniform on ``{-1, +1}`` unless given.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if steps < 0:
        raise ValueError(f"steps must be nonnegative, got {steps}")
    rng = _rng(seed)
    x = rng.uniform(-box, box, (n, 3)) if x0 is None else np.array(x0, dtype=np.float64)
    v = rng.standard_normal((n, 3)) * vel_std if v0 is None else np.array(v0, dtype=np.float64)
    q = rng.choice([-1.0, 1.0], n) if charges is None else np.asarray(charges, dtype=np.float64)
    if x.shape != (n, 3) or v.shape != (n, 3) or q.shape != (n,):
        raise ValueError("initial state does not match n")
    xs = np.empty((steps + 1, n, 3))
    vs = np.empty((steps + 1, n, 3))
    energy = np.empty(steps + 1)
    xs[0], vs[0] = x, v
    energy[0] = 0.5 * np.sum(v * v) + potential_energy(x, q, softening)
    f = coulomb_forces(x, q, softening)
    for s in range(1, steps + 1):
        v_half = v + 0.5 * dt * f
        x = x + dt * v_half
        f = coulomb_forces(x, q, softening)
        v = v_half + 0.5 * dt * f
        xs[s], vs[s] = x, v
        energy[s] = 0.5 * np.sum(v * v) + potential_energy(x, q, softening)
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(vs))):
        raise FloatingPointError("trajectory diverged")
    return Trajectory(xs, vs, q, float(dt), energy)
