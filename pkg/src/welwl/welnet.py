"""Equivariant pooling, the WeLConv block and the WeLNet forward stack.

Every update has the form

    x_i' = x_i + a_i v_i + sum_k b_ik (x_k - x_i) + sum_{k != i} g_ik v_k
    v_i' =       a'_i v_i + sum_k b'_ik (x_k - x_i) + sum_{k != i} g'_ik v_k

with scalar coefficients computed from motion-invariant features, which makes
positions equivariant to permutations, O(3) and translations, and velocities
equivariant to permutations and O(3) but translation invariant.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ppgn
from .geometry import PosVel, encode_posvel
from .tensor_core import ActivationKind, DenseLayer, ShapeError

__all__ = [
    "MLP",
    "PoolingParams",
    "WeLConvParams",
    "WeLNetParams",
    "init_mlp",
    "init_pooling",
    "init_welnet",
    "equivariant_pool",
    "welconv",
    "welnet_forward",
    "ppgn_pair_features",
    "FiniteDiffReport",
    "finite_diff_check",
]


@dataclass(frozen=True)
class MLP:
    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for a, b in zip(self.layers, self.layers[1:]):
            if a.d_out != b.d_in:
                raise ShapeError(f"MLP layers do not chain: {a.d_out} -> {b.d_in}")

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out

    def __call__(self, x) -> np.ndarray:
        for layer in self.layers:
            x = layer(x)
        return x

    def to_dict(self) -> list:
        return [l.to_dict() for l in self.layers]

    @classmethod
    def from_dict(cls, d: list) -> "MLP":
        return cls(tuple(DenseLayer.from_dict(l) for l in d))


def init_mlp(rng: np.random.Generator, d_in: int, d_out: int, activation: ActivationKind,
             hidden: int = 32, shallow: bool = False, gain: float = 1.0,
             out_gain: float = 1.0) -> MLP:
    """Gaussian MLP with fan-in scaled weights.

    ``shallow`` gives a single ``rho(Ax + b)`` layer; otherwise two layers with
    ``hidden`` units.  ``out_gain`` scales the last layer's weights and bias.
    """
    dims = [d_in, d_out] if shallow else [d_in, hidden, d_out]
    layers = []
    for k, (a, b) in enumerate(zip(dims, dims[1:])):
        g = gain * (out_gain if k == len(dims) - 2 else 1.0)
        bias_g = out_gain if k == len(dims) - 2 else 1.0
        layers.append(DenseLayer.gaussian(rng, a, b, activation, g / np.sqrt(a), bias_g))
    return MLP(tuple(layers))


# ---------------------------------------------------------------------------
# pooling from PPGN pair features


@dataclass(frozen=True)
class PoolingParams:
    """Six scalar-valued networks; psi[0] is psi_1 and so on."""

    psi: tuple[MLP, MLP, MLP, MLP, MLP, MLP]

    def __post_init__(self):
        psi = tuple(self.psi)
        if len(psi) != 6:
            raise ValueError(f"pooling needs six networks, got {len(psi)}")
        if len({m.d_in for m in psi}) != 1 or any(m.d_out != 1 for m in psi):
            raise ShapeError("all psi networks must share input width and output a scalar")
        object.__setattr__(self, "psi", psi)

    @property
    def d_in(self) -> int:
        return self.psi[0].d_in


def init_pooling(seed, width: int, activation="scaled_softplus", hidden: int = 32,
                 shallow: bool = False, out_gain: float = 1.0) -> PoolingParams:
    rng = np.random.default_rng(seed)
    act = ActivationKind.parse(activation)
    return PoolingParams(tuple(init_mlp(rng, width, 1, act, hidden, shallow, out_gain=out_gain)
                               for _ in range(6)))


def _pool(x: np.ndarray, v: np.ndarray, self_x, pair_x, pair_v, self_v, pair_xv, pair_vv):
    """Shared arithmetic of both pooling forms; coefficients are (n,) or (n, n)."""
    n = x.shape[0]
    off = 1.0 - np.eye(n)
    diff = x[None, :, :] - x[:, None, :]  # diff[i, k] = x_k - x_i
    x_out = (x + self_x[:, None] * v
             + np.einsum("ik,ikc->ic", pair_x, diff)
             + np.einsum("ik,kc->ic", pair_v * off, v))
    v_out = (self_v[:, None] * v
             + np.einsum("ik,ikc->ic", pair_xv, diff)
             + np.einsum("ik,kc->ic", pair_vv * off, v))
    return x_out, v_out


def equivariant_pool(xv: PosVel, cT, p: PoolingParams) -> PosVel:
    """Pool invariant pair features into equivariant node outputs.

    psi_1 and psi_4 read the diagonal features ``c(i, i)``; the rest read
    ``c(i, k)``.  The ``k = i`` term of the ``(x_k - x_i)`` sums vanishes and
    is kept; the velocity sums skip ``k = i``.
    """
    c = np.asarray(cT, dtype=np.float64)
    n = xv.n
    if c.shape[:2] != (n, n) or c.ndim != 3:
        raise ShapeError(f"pair features of shape {c.shape} do not match n={n}")
    if c.shape[2] != p.d_in:
        raise ShapeError(f"pooling expects {p.d_in} channels, features have {c.shape[2]}")
    diag = c[np.arange(n), np.arange(n)]
    s = [m(diag)[:, 0] if k in (0, 3) else m(c)[:, :, 0] for k, m in enumerate(p.psi)]
    x_out, v_out = _pool(xv.x, xv.v, s[0], s[1], s[2], s[3], s[4], s[5])
    return PosVel(x_out, v_out)


# ---------------------------------------------------------------------------
# WeLConv


@dataclass(frozen=True)
class WeLConvParams:
    phi_e: MLP
    phi_x: MLP
    phi_v: MLP
    phi_n: MLP
    hat_phi_x: MLP
    hat_phi_v: MLP
    hat_phi_n: MLP
    phi_h: MLP

    def __post_init__(self):
        m = self.phi_e.d_out
        for name in ("phi_x", "phi_v", "phi_n", "hat_phi_x", "hat_phi_v", "hat_phi_n"):
            net = getattr(self, name)
            if net.d_in != m or net.d_out != 1:
                raise ShapeError(f"{name} must map message width {m} to a scalar")
        if self.phi_h.d_in != self.hidden + m:
            raise ShapeError(f"phi_h input {self.phi_h.d_in} != hidden {self.hidden} + message {m}")

    @property
    def hidden(self) -> int:
        return self.phi_h.d_out

    @property
    def message_width(self) -> int:
        return self.phi_e.d_out

    _NETS = ("phi_e", "phi_x", "phi_v", "phi_n", "hat_phi_x", "hat_phi_v", "hat_phi_n", "phi_h")

    def to_dict(self) -> dict:
        return {k: getattr(self, k).to_dict() for k in self._NETS}

    @classmethod
    def from_dict(cls, d: dict) -> "WeLConvParams":
        return cls(**{k: MLP.from_dict(d[k]) for k in cls._NETS})


def welconv(h, E, c, xv: PosVel, p: WeLConvParams):
    """One WeLConv block; returns ``(h_out, PosVel_out)``.

    ``h`` is ``(n, H)``, ``E`` the ``(n, n, F)`` edge features and ``c`` the
    ``(n, n, Delta)`` PPGN pair features of the current cloud.
    """
    h = np.asarray(h, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    n = xv.n
    if h.shape != (n, p.hidden):
        raise ShapeError(f"hidden state {h.shape} does not match (n={n}, H={p.hidden})")
    if E.shape[:2] != (n, n) or c.shape[:2] != (n, n):
        raise ShapeError(f"edge features {E.shape} / pair features {c.shape} do not match n={n}")
    hi = np.broadcast_to(h[:, None, :], (n, n, h.shape[1]))
    hj = np.broadcast_to(h[None, :, :], (n, n, h.shape[1]))
    z = np.concatenate([hi, hj, E, c], axis=-1)
    if z.shape[-1] != p.phi_e.d_in:
        raise ShapeError(f"message input width {z.shape[-1]} != phi_e input {p.phi_e.d_in}")
    m_ij = p.phi_e(z)
    m_i = m_ij.sum(axis=1)
    x_out, v_out = _pool(
        xv.x, xv.v,
        p.phi_n(m_i)[:, 0], p.phi_x(m_ij)[:, :, 0], p.phi_v(m_ij)[:, :, 0],
        p.hat_phi_n(m_i)[:, 0], p.hat_phi_x(m_ij)[:, :, 0], p.hat_phi_v(m_ij)[:, :, 0],
    )
    h_out = p.phi_h(np.concatenate([h, m_i], axis=-1))
    return h_out, PosVel(x_out, v_out)


# ---------------------------------------------------------------------------
# full stack


@dataclass(frozen=True)
class WeLNetParams:
    shared_ppgn: ppgn.PPGNParams
    conv_layers: tuple[WeLConvParams, ...]
    node_embed: DenseLayer
    recompute_wl: bool = True
    config: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple(self.conv_layers))
        if self.shared_ppgn.input_width != 6:
            raise ShapeError("shared PPGN must read the 6-channel position-velocity encoding")
        for conv in self.conv_layers:
            if conv.hidden != self.node_embed.d_out:
                raise ShapeError("conv hidden width differs from node embedding width")

    @property
    def L(self) -> int:
        return len(self.conv_layers)

    def to_dict(self) -> dict:
        return {
            "kind": "welnet",
            "recompute_wl": self.recompute_wl,
            "config": self.config,
            "shared_ppgn": self.shared_ppgn.to_dict(),
            "node_embed": self.node_embed.to_dict(),
            "conv_layers": [c.to_dict() for c in self.conv_layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeLNetParams":
        return cls(
            ppgn.PPGNParams.from_dict(d["shared_ppgn"]),
            tuple(WeLConvParams.from_dict(c) for c in d["conv_layers"]),
            DenseLayer.from_dict(d["node_embed"]),
            bool(d["recompute_wl"]),
            d.get("config", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "WeLNetParams":
        return cls.from_dict(json.loads(s))


def init_welnet(seed, node_feat_dim: int = 1, edge_feat_dim: int = 1, *, hidden: int = 128,
                wl_width: int = 32, T: int = 2, L: int = 4, activation="scaled_softplus",
                mlp_hidden: int = 32, shallow: bool = False, recompute_wl: bool = True,
                ppgn_weight_std: float = 0.1, coef_gain: float = 0.1) -> WeLNetParams:
    """Random WeLNet with the N-body defaults (4 convolutions, T=2, widths 128/32).

    The shared PPGN draws fan-in scaled weights with gain ``ppgn_weight_std``
    and unit-variance biases so pair features stay O(1) through the product
    layers.  Coefficient heads use ``coef_gain`` on their last layer, which
    keeps an untrained stack from amplifying coordinates.
    """
    act = ActivationKind.parse(activation)
    rng = np.random.default_rng(seed)
    shared = ppgn.init_params(rng, 6, wl_width, T, act, weight_std=ppgn_weight_std, fan_in=True)
    node_embed = DenseLayer.gaussian(rng, node_feat_dim + 1, hidden, act, 1 / np.sqrt(node_feat_dim + 1))
    msg = hidden
    convs = []
    for _ in range(L):
        phi_e = init_mlp(rng, 2 * hidden + edge_feat_dim + shared.feature_width, msg, act, mlp_hidden, shallow)
        heads = [init_mlp(rng, msg, 1, act, mlp_hidden, shallow, out_gain=coef_gain) for _ in range(6)]
        phi_h = init_mlp(rng, hidden + msg, hidden, act, mlp_hidden, shallow)
        convs.append(WeLConvParams(phi_e, heads[0], heads[1], heads[2], heads[3], heads[4], heads[5], phi_h))
    config = {
        "seed": seed if not isinstance(seed, np.random.Generator) else None,
        "hidden": hidden, "wl_width": wl_width, "T": T, "L": L,
        "activation": act.to_dict(), "mlp_hidden": mlp_hidden, "shallow": shallow,
        "ppgn_weight_std": ppgn_weight_std, "coef_gain": coef_gain,
    }
    return WeLNetParams(shared, tuple(convs), node_embed, recompute_wl, config)


def ppgn_pair_features(xv: PosVel, params: ppgn.PPGNParams) -> np.ndarray:
    """``c_T`` of the shared PPGN on the position-velocity encoding."""
    e, _ = encode_posvel(xv)
    _, (cT,) = ppgn.forward(e, params)
    return cT


def welnet_forward(xv: PosVel, node_feats, edge_feats, p: WeLNetParams):
    """Encode, run the shared PPGN, and apply the convolutions in sequence.

    ``node_feats`` is ``(n, F_node)`` (e.g. charges) and ``edge_feats``
    ``(n, n, F_edge)`` (e.g. charge products); both must be invariant.
    Returns ``(PosVel, hidden)``.
    """
    n = xv.n
    node_feats = np.asarray(node_feats, dtype=np.float64).reshape(n, -1)
    edge_feats = np.asarray(edge_feats, dtype=np.float64)
    if edge_feats.ndim == 2:
        edge_feats = edge_feats[:, :, None]
    if edge_feats.shape[:2] != (n, n):
        raise ShapeError(f"edge features {edge_feats.shape} do not match n={n}")
    _, speed = encode_posvel(xv)
    h = p.node_embed(np.concatenate([node_feats, speed[:, None]], axis=-1))
    c = None
    for conv in p.conv_layers:
        if c is None or p.recompute_wl:
            c = ppgn_pair_features(xv, p.shared_ppgn)
        h, xv = welconv(h, edge_feats, c, xv, conv)
    return xv, h


# ---------------------------------------------------------------------------
# smoothness probe


@dataclass(frozen=True)
class FiniteDiffReport:
    """Per-coordinate secant slopes and second-difference ratios.

    ``ratio = D2(h) / D2(h/2)`` where ``D2(s) = f(p + s e) - 2 f(p) + f(p - s e)``.
    It tends to 4 where ``f`` is smooth with nonzero curvature and to 2 at a
    kink.
    """

    coordinates: tuple[int, ...]
    h: float
    slope_h: np.ndarray
    slope_h2: np.ndarray
    ratio: np.ndarray

    def within(self, lo: float = 3.5, hi: float = 4.5) -> np.ndarray:
        return (self.ratio >= lo) & (self.ratio <= hi)


def finite_diff_check(fn: Callable[[np.ndarray], float], point, coordinates: Sequence[int],
                      h: float = 1e-3) -> FiniteDiffReport:
    if not h > 0:
        raise ValueError("step h must be positive")
    p = np.asarray(point, dtype=np.float64).reshape(-1)
    f0 = float(fn(p))
    coords = tuple(int(c) for c in coordinates)
    s1, s2, r = [], [], []
    for c in coords:
        vals = {}
        for step in (h, -h, h / 2, -h / 2):
            q = p.copy()
            q[c] += step
            vals[step] = float(fn(q))
        s1.append((vals[h] - vals[-h]) / (2 * h))
        s2.append((vals[h / 2] - vals[-h / 2]) / h)
        d_h = vals[h] - 2 * f0 + vals[-h]
        d_h2 = vals[h / 2] - 2 * f0 + vals[-h / 2]
        if d_h2 != 0:
            r.append(d_h / d_h2)
        else:
            # a kink inside [-h, h] but outside [-h/2, h/2]; both zero means no signal
            r.append(np.inf if d_h != 0 else np.nan)
    return FiniteDiffReport(coords, h, np.array(s1), np.array(s2), np.array(r))
