"""Analytic PPGN: product aggregation, combination, readout, separation gaps."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .tensor_core import (
    ActivationKind,
    DenseLayer,
    ShapeError,
    as_edge_tensor,
    channel_matmul,
    ordered_sum,
)

__all__ = [
    "PPGNLayer",
    "PPGNParams",
    "init_params",
    "recommended_width",
    "ppgn_layer",
    "readout",
    "forward",
    "separation_gap",
    "relative_gap",
    "rbf_embed",
]

COMBINATIONS = ("product", "concat")


@dataclass(frozen=True)
class PPGNLayer:
    phi1: DenseLayer
    phi2: DenseLayer
    phi3: DenseLayer

    def __post_init__(self):
        widths = {self.phi1.d_out, self.phi2.d_out, self.phi3.d_out}
        ins = {self.phi1.d_in, self.phi2.d_in, self.phi3.d_in}
        if len(widths) != 1 or len(ins) != 1:
            raise ShapeError(f"phi1/phi2/phi3 disagree on widths: in {ins}, out {widths}")

    @property
    def d_in(self) -> int:
        return self.phi1.d_in

    @property
    def d_out(self) -> int:
        return self.phi1.d_out


@dataclass(frozen=True)
class PPGNParams:
    """All weights of an analytic PPGN plus how they were drawn."""

    layers: tuple[PPGNLayer, ...]
    readout: DenseLayer
    combination: str = "product"
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.combination not in COMBINATIONS:
            raise ValueError(f"combination must be one of {COMBINATIONS}")
        if not self.layers:
            raise ValueError("PPGN needs at least one layer (T >= 1)")
        object.__setattr__(self, "layers", tuple(self.layers))
        width = self.layers[0].d_in
        for t, layer in enumerate(self.layers):
            if layer.d_in != width:
                raise ShapeError(f"layer {t} expects width {layer.d_in}, previous layer gives {width}")
            width = layer.d_out * (2 if self.combination == "concat" else 1)
        if self.readout.d_in != width:
            raise ShapeError(f"readout expects width {self.readout.d_in}, last layer gives {width}")

    @property
    def T(self) -> int:
        return len(self.layers)

    @property
    def input_width(self) -> int:
        return self.layers[0].d_in

    @property
    def output_width(self) -> int:
        return self.readout.d_out

    @property
    def feature_width(self) -> int:
        """Channel count of the final pair features ``c_T``."""
        return self.readout.d_in

    @property
    def n_params(self) -> int:
        return self.readout.n_params + sum(
            l.phi1.n_params + l.phi2.n_params + l.phi3.n_params for l in self.layers)

    def flat(self) -> np.ndarray:
        """All parameters as one vector (layer order, phi1..phi3, weight then bias)."""
        parts = []
        for l in self.layers:
            for phi in (l.phi1, l.phi2, l.phi3):
                parts += [phi.weight.ravel(), phi.bias]
        parts += [self.readout.weight.ravel(), self.readout.bias]
        return np.concatenate(parts)

    def with_flat(self, theta) -> "PPGNParams":
        """Copy with parameters replaced from a vector laid out as :meth:`flat`."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} parameters, got {theta.size}")
        pos = 0

        def take(layer: DenseLayer) -> DenseLayer:
            nonlocal pos
            w = theta[pos:pos + layer.weight.size].reshape(layer.weight.shape)
            pos += layer.weight.size
            b = theta[pos:pos + layer.bias.size]
            pos += layer.bias.size
            return DenseLayer(w.copy(), b.copy(), layer.activation)

        layers = tuple(PPGNLayer(take(l.phi1), take(l.phi2), take(l.phi3)) for l in self.layers)
        return replace(self, layers=layers, readout=take(self.readout))

    def to_dict(self) -> dict:
        return {
            "kind": "ppgn",
            "T": self.T,
            "combination": self.combination,
            "provenance": self.provenance,
            "layers": [
                {"phi1": l.phi1.to_dict(), "phi2": l.phi2.to_dict(), "phi3": l.phi3.to_dict()}
                for l in self.layers
            ],
            "readout": self.readout.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PPGNParams":
        layers = tuple(
            PPGNLayer(*(DenseLayer.from_dict(l[k]) for k in ("phi1", "phi2", "phi3")))
            for l in d["layers"]
        )
        return cls(layers, DenseLayer.from_dict(d["readout"]), d["combination"], d.get("provenance", {}))

    def to_json(self) -> str:
        # json writes floats with repr(), the shortest string that round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "PPGNParams":
        return cls.from_dict(json.loads(s))


def recommended_width(intrinsic_dim: int) -> int:
    """Feature width ``2 d + 1`` that suffices for uniform separation."""
    if intrinsic_dim < 0:
        raise ValueError("intrinsic dimension must be nonnegative")
    return 2 * intrinsic_dim + 1


def init_params(seed, D: int, width: int, T: int, activation="softplus",
                combination: str = "product", weight_std: float = 1.0,
                fan_in: bool = False, bias_std: float = 1.0) -> PPGNParams:
    """Draw every weight and bias i.i.d. from a Gaussian.

    The defaults give the standard Gaussian.  ``fan_in`` divides each weight
    std by ``sqrt(d_in)``; any absolutely continuous choice keeps the
    almost-everywhere guarantees.  With ``"concat"`` the pair-feature width
    doubles every layer.
    """
    if width < 1 or T < 1 or D < 1:
        raise ValueError(f"need D, width, T >= 1 (got D={D}, width={width}, T={T})")
    if combination not in COMBINATIONS:
        raise ValueError(f"combination must be one of {COMBINATIONS}")
    act = ActivationKind.parse(activation)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def std(d_in):
        return weight_std / np.sqrt(d_in) if fan_in else weight_std

    layers = []
    d_in = D
    for t in range(T):
        d_out = width if combination == "product" else width * 2 ** t
        phis = [DenseLayer.gaussian(rng, d_in, d_out, act, std(d_in), bias_std) for _ in range(3)]
        layers.append(PPGNLayer(*phis))
        d_in = d_out * (2 if combination == "concat" else 1)
    ro = DenseLayer.gaussian(rng, d_in, width, act, std(d_in), bias_std)
    prov = {
        "seed": None if isinstance(seed, np.random.Generator) else seed,
        "distribution": "gaussian",
        "weight_std": weight_std,
        "fan_in": fan_in,
        "bias_std": bias_std,
        "D": D, "width": width, "T": T,
        "activation": act.to_dict(),
    }
    return PPGNParams(tuple(layers), ro, combination, prov)


def ppgn_layer(c, layer: PPGNLayer, combination: str = "product") -> np.ndarray:
    """One aggregation + combination step on an ``(n, n, d)`` tensor."""
    c = as_edge_tensor(c)
    if c.shape[2] != layer.d_in:
        raise ShapeError(f"layer expects {layer.d_in} channels, tensor has {c.shape[2]}")
    agg = channel_matmul(layer.phi1(c), layer.phi2(c))
    own = layer.phi3(c)
    if combination == "product":
        return agg * own
    if combination == "concat":
        return np.concatenate([agg, own], axis=-1)
    raise ValueError(f"unknown combination {combination!r}")


def readout(c, params: PPGNParams) -> np.ndarray:
    c = as_edge_tensor(c)
    if c.shape[2] != params.readout.d_in:
        raise ShapeError(f"readout expects {params.readout.d_in} channels, tensor has {c.shape[2]}")
    n = c.shape[0]
    return ordered_sum(params.readout(c).reshape(n * n, -1))


def forward(g, params: PPGNParams, keep_layers: bool = False):
    """Run all layers and the readout.

    Returns ``(global_feature, tensors)``; ``tensors`` holds ``c_0 .. c_T``
    when ``keep_layers`` is set and just ``[c_T]`` otherwise.
    """
    c = as_edge_tensor(g)
    if c.shape[2] != params.input_width:
        raise ShapeError(f"graph has {c.shape[2]} channels, network expects {params.input_width}")
    kept = [c] if keep_layers else []
    for layer in params.layers:
        c = ppgn_layer(c, layer, params.combination)
        if keep_layers:
            kept.append(c)
    if not keep_layers:
        kept = [c]
    return readout(c, params), kept


def separation_gap(ga, gb, params: PPGNParams) -> float:
    fa, _ = forward(ga, params)
    fb, _ = forward(gb, params)
    return float(np.linalg.norm(fa - fb))


def relative_gap(ga, gb, params: PPGNParams) -> tuple[float, float]:
    """``(gap, gap / max(|f_a|, |f_b|))``; the relative part is 0 when both vanish."""
    fa, _ = forward(ga, params)
    fb, _ = forward(gb, params)
    gap = float(np.linalg.norm(fa - fb))
    scale = max(float(np.linalg.norm(fa)), float(np.linalg.norm(fb)))
    return gap, (gap / scale if scale > 0 else 0.0)


def rbf_embed(e, count: int = 16, cutoff: float = 5.0) -> np.ndarray:
    """Optional exponential radial-basis expansion of each channel.

    Each value ``r`` becomes ``exp(-beta (exp(-r) - mu_k)^2)`` for ``count``
    centres ``mu_k`` evenly spaced in ``[exp(-cutoff), 1]``.  Off by default;
    raw distances already carry the separation guarantees.
    """
    e = as_edge_tensor(e)
    mu = np.linspace(np.exp(-cutoff), 1.0, count)
    beta = (2.0 / count * (1.0 - np.exp(-cutoff))) ** -2
    out = np.exp(-beta * (np.exp(-e)[..., None] - mu) ** 2)
    return out.reshape(e.shape[0], e.shape[1], -1)
