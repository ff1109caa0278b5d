"""Experiment drivers.  Each returns a :class:`RunRecord` with a pass verdict.

Randomness: trial ``t`` of experiment ``name`` draws from the substream
``(seed, name, t, component)`` so trials are reproducible in isolation.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import ppgn, wl
from ..geometry import (PosVel, apply_motion, encode_posvel, quantize_tensor, random_motion,
                        random_permutation, EuclideanMotion, PermutationMap)
from ..tensor_core import ActivationKind
from ..welnet import init_welnet, welnet_forward
from .generators import gen_cycle_pair, gen_equivalent_pair, gen_perturbed_pair, gen_random_posvel
from .io import RunRecord, load_graph_pairs
from .seeds import substream

__all__ = [
    "ExperimentConfig",
    "worker_count",
    "cycle_corpus",
    "run_separation_experiment",
    "run_geometric_completeness",
    "run_equivariance_suite",
    "run_uniform_separation",
    "run_scaling_benchmark",
]


@dataclass
class ExperimentConfig:
    seed: int = 0
    n: int = 4
    width: int = 1
    T: int = 3
    activations: tuple[str, ...] = ("softplus", "leaky_elu", "relu")
    combination: str = "product"
    grid: float = 1e-9
    threshold: float = 1e-13
    rel_threshold: float = 1e-10
    trials: int = 32
    k_max: int = 10
    corpus: str | None = None
    eps: float = 1e-3
    tol: float = 1e-8
    translation_tol: float = 1e-10
    min_rate: float = 0.95
    sizes: tuple[int, ...] = (64, 128)
    repeats: int = 7
    ratio_band: tuple[float, float] = (6.0, 12.0)
    workers: int = 1
    out: str | None = None
    fmt: str = "csv"

    def __post_init__(self):
        self.activations = tuple(self.activations)
        self.sizes = tuple(int(s) for s in self.sizes)
        self.ratio_band = tuple(self.ratio_band)
        for name in ("n", "width", "T", "trials", "repeats", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("threshold", "rel_threshold", "grid", "tol", "translation_tol", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")
        if self.fmt not in ("csv", "json"):
            raise ValueError(f"format must be csv or json, got {self.fmt!r}")
        for a in self.activations:
            ActivationKind.parse(a)

    def echo(self) -> dict:
        d = asdict(self)
        for k in ("activations", "sizes", "ratio_band"):
            d[k] = list(d[k])
        return d


def worker_count(default: int = 1) -> int:
    """``WELWL_WORKERS`` when set, else ``default``."""
    env = os.environ.get("WELWL_WORKERS")
    if env is None or env == "":
        return default
    w = int(env)
    if w < 1:
        raise ValueError(f"WELWL_WORKERS must be positive, got {env}")
    return w


def _map(fn, jobs, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, *zip(*jobs)))


def _finish(rec: RunRecord, t0: float, failures: list[str]) -> RunRecord:
    rec.sort_rows()
    rec.failures = failures
    rec.passed = not failures
    rec.timings["wall_s"] = time.perf_counter() - t0
    return rec


# ---------------------------------------------------------------------------
# analytic PPGN separation


def cycle_corpus(k_max: int, k_min: int = 3) -> list[tuple[wl.WLGraph, wl.WLGraph]]:
    return [gen_cycle_pair(k) for k in range(k_min, k_max + 1)]


SEPARATION_COLUMNS = ["trial", "pair", "kind", "activation", "seed", "gap", "rel_gap", "separated"]


def _separation_trial(cfg: ExperimentConfig, a_idx: int, act: str, s: int, corpus, trial0: int):
    rng = substream(cfg.seed, "separation", act, s)
    D = corpus[0][0].tensor.shape[2]
    params = ppgn.init_params(rng, D, cfg.width, cfg.T, act, cfg.combination)
    perm_rng = substream(cfg.seed, "separation-control", s)
    rows = []
    for p, (ga, gb) in enumerate(corpus):
        try:
            gap, rel = ppgn.relative_gap(ga.tensor, gb.tensor, params)
            # control: a relabelled copy of the first graph is isomorphic to it
            ctrl = ga.permuted(perm_rng.permutation(ga.n))
            cgap, crel = ppgn.relative_gap(ga.tensor, ctrl.tensor, params)
        except Exception as exc:
            raise RuntimeError(f"pair {p}, activation {act}, seed {s}: {exc}") from exc
        base = trial0 + 2 * p
        rows.append(dict(trial=base, pair=p, kind="target", activation=act, seed=s,
                         gap=gap, rel_gap=rel, separated=gap > cfg.threshold))
        rows.append(dict(trial=base + 1, pair=p, kind="control", activation=act, seed=s,
                         gap=cgap, rel_gap=crel, separated=crel > cfg.rel_threshold))
    return rows


def run_separation_experiment(cfg: ExperimentConfig, corpus=None) -> RunRecord:
    """Gap of a width-``cfg.width`` PPGN per pair, activation and seed.

    ``cfg.trials`` seeds are drawn per activation; one network per seed is
    applied to the whole corpus.  Each pair also gets an isomorphic control.
    Success needs ``min_rate`` of target gaps above ``threshold`` for every
    analytic activation, control relative gaps at most ``rel_threshold``, and
    any non-analytic activation to do strictly worse than the analytic ones.
    """
    t0 = time.perf_counter()
    if corpus is None:
        corpus = load_graph_pairs(cfg.corpus) if cfg.corpus else cycle_corpus(cfg.k_max)
    corpus = list(corpus)
    if not corpus:
        raise ValueError("separation experiment needs a nonempty corpus")
    if any(g.tensor is None for pair in corpus for g in pair):
        raise ValueError("every graph needs a numeric tensor view")
    rec = RunRecord("separate", cfg.echo(), SEPARATION_COLUMNS)
    stride = 2 * len(corpus)
    jobs = [(cfg, a, act, s, corpus, (a * cfg.trials + s) * stride)
            for a, act in enumerate(cfg.activations) for s in range(cfg.trials)]
    for rows in _map(_separation_trial, jobs, cfg.workers):
        rec.rows += rows
    rates, control = {}, {}
    for act in cfg.activations:
        tgt = [r for r in rec.rows if r["activation"] == act and r["kind"] == "target"]
        ctl = [r for r in rec.rows if r["activation"] == act and r["kind"] == "control"]
        rates[act] = sum(r["separated"] for r in tgt) / len(tgt)
        control[act] = max(r["rel_gap"] for r in ctl)
    rec.summary = {"success_rate": rates, "control_max_rel_gap": control, "pairs": len(corpus)}
    failures = []
    analytic = [a for a in cfg.activations if ActivationKind.parse(a).analytic]
    for act in cfg.activations:
        if control[act] > cfg.rel_threshold:
            failures.append(f"{act}: control relative gap {control[act]:.3e} > {cfg.rel_threshold:g}")
    for act in analytic:
        if rates[act] < cfg.min_rate:
            failures.append(f"{act}: success rate {rates[act]:.4f} < {cfg.min_rate}")
    if analytic:
        floor = min(rates[a] for a in analytic)
        for act in cfg.activations:
            if act not in analytic and not rates[act] < floor:
                failures.append(f"{act}: success rate {rates[act]:.4f} not below analytic {floor:.4f}")
    return _finish(rec, t0, failures)


# ---------------------------------------------------------------------------
# discrete completeness on quantized encodings

COMPLETENESS_COLUMNS = ["trial", "kind", "separated", "first_round", "expected"]


def _completeness_trial(cfg: ExperimentConfig, t: int, kind: str):
    rng = substream(cfg.seed, "complete", t, kind)
    if kind == "equivalent":
        a, b = gen_equivalent_pair(rng, cfg.n)
    elif kind == "random":
        a, b = gen_random_posvel(rng, cfg.n), gen_random_posvel(rng, cfg.n)
    else:
        a, b = gen_perturbed_pair(rng, cfg.n, cfg.eps)
    ga = quantize_tensor(encode_posvel(a)[0], cfg.grid)
    gb = quantize_tensor(encode_posvel(b)[0], cfg.grid)
    v = wl.run_2wl_pair(ga, gb, cfg.T)
    return dict(trial=t, kind=kind, separated=v.separated, first_round=v.first_separating_round,
                expected=kind != "equivalent")


def run_geometric_completeness(cfg: ExperimentConfig) -> RunRecord:
    """``trials`` equivalent pairs and ``trials`` non-equivalent pairs.

    Non-equivalent pairs are independent random clouds for the first half and
    ``eps``-perturbed copies for the rest.  2-WL runs for ``cfg.T`` rounds.
    """
    t0 = time.perf_counter()
    rec = RunRecord("complete", cfg.echo(), COMPLETENESS_COLUMNS)
    K = cfg.trials
    half = (K + 1) // 2
    kinds = ["equivalent"] * K + ["random"] * half + ["perturbed"] * (K - half)
    rec.rows = _map(_completeness_trial, [(cfg, t, k) for t, k in enumerate(kinds)], cfg.workers)
    false_sep = sum(r["separated"] for r in rec.rows if not r["expected"])
    missed = sum(not r["separated"] for r in rec.rows if r["expected"])
    rec.summary = {"false_separations": false_sep, "missed_separations": missed,
                   "equivalent": K, "non_equivalent": K}
    failures = []
    if false_sep:
        failures.append(f"{false_sep} equivalent pairs separated")
    if missed:
        failures.append(f"{missed} non-equivalent pairs not separated")
    return _finish(rec, t0, failures)


# ---------------------------------------------------------------------------
# WeLNet equivariance

EQUIVARIANCE_COLUMNS = ["trial", "x_rel_err", "v_rel_err", "v_translation_err", "displacement"]


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _equivariance_trial(cfg: ExperimentConfig, t: int):
    rng = substream(cfg.seed, "equivariance", t, "net")
    net = init_welnet(rng, 1, 1)
    rng = substream(cfg.seed, "equivariance", t, "input")
    n = cfg.n
    xv = gen_random_posvel(rng, n)
    q = rng.choice([-1.0, 1.0], n)
    m, tau = random_motion(rng), random_permutation(rng, n)
    out, _ = welnet_forward(xv, q[:, None], np.outer(q, q), net)
    qp = q[tau.perm]
    out_g, _ = welnet_forward(apply_motion(m, tau, xv), qp[:, None], np.outer(qp, qp), net)
    expect = apply_motion(m, tau, out)
    shift = EuclideanMotion(np.eye(3), rng.standard_normal(3))
    out_t, _ = welnet_forward(apply_motion(shift, PermutationMap.identity(n), xv),
                              q[:, None], np.outer(q, q), net)
    return dict(trial=t, x_rel_err=_rel(out_g.x, expect.x), v_rel_err=_rel(out_g.v, expect.v),
                v_translation_err=_rel(out_t.v, out.v),
                displacement=_rel(out.x, xv.x))


def run_equivariance_suite(cfg: ExperimentConfig) -> RunRecord:
    """Two-path check of WeLNet under random motions and relabellings."""
    t0 = time.perf_counter()
    rec = RunRecord("equivariance", cfg.echo(), EQUIVARIANCE_COLUMNS)
    rec.rows = _map(_equivariance_trial, [(cfg, t) for t in range(cfg.trials)], cfg.workers)
    worst = max(max(r["x_rel_err"], r["v_rel_err"]) for r in rec.rows)
    worst_t = max(r["v_translation_err"] for r in rec.rows)
    # displacement |X_out - X| / |X| shows the network is far from the identity
    rec.summary = {"max_rel_err": worst, "max_v_translation_err": worst_t,
                   "min_displacement": min(r["displacement"] for r in rec.rows)}
    failures = []
    if worst > cfg.tol:
        failures.append(f"equivariance error {worst:.3e} > {cfg.tol:g}")
    if worst_t > cfg.translation_tol:
        failures.append(f"velocity translation error {worst_t:.3e} > {cfg.translation_tol:g}")
    return _finish(rec, t0, failures)


# ---------------------------------------------------------------------------
# one network, many pairs

UNIFORM_COLUMNS = ["trial", "kind", "gap", "rel_gap", "separated", "expected"]


def uniform_network(cfg: ExperimentConfig) -> ppgn.PPGNParams:
    act = cfg.activations[0]
    return ppgn.init_params(substream(cfg.seed, "uniform", "ppgn"), 6, cfg.width, cfg.T, act, cfg.combination)


def _uniform_trial(cfg: ExperimentConfig, params, t: int, kind: str):
    rng = substream(cfg.seed, "uniform", t, kind)
    if kind == "equivalent":
        a, b = gen_equivalent_pair(rng, cfg.n)
    elif kind == "random":
        a, b = gen_random_posvel(rng, cfg.n), gen_random_posvel(rng, cfg.n)
    else:
        a, b = gen_perturbed_pair(rng, cfg.n, cfg.eps)
    gap, rel = ppgn.relative_gap(encode_posvel(a)[0], encode_posvel(b)[0], params)
    return dict(trial=t, kind=kind, gap=gap, rel_gap=rel, separated=rel > cfg.rel_threshold,
                expected=kind != "equivalent")


def run_uniform_separation(cfg: ExperimentConfig, n_equivalent: int | None = None) -> RunRecord:
    """A single fixed network (first activation of ``cfg``) on ``trials`` non-equivalent pairs.

    Half of the non-equivalent pairs are independent clouds and half are
    ``eps`` perturbations; ``n_equivalent`` equivalent pairs (default a
    quarter of ``trials``) serve as controls.  Pairs count as separated when
    the relative gap exceeds ``rel_threshold``.
    """
    t0 = time.perf_counter()
    rec = RunRecord("uniform", cfg.echo(), UNIFORM_COLUMNS)
    params = uniform_network(cfg)
    K = cfg.trials
    n_eq = max(1, K // 4) if n_equivalent is None else n_equivalent
    half = (K + 1) // 2
    kinds = ["random"] * half + ["perturbed"] * (K - half) + ["equivalent"] * n_eq
    jobs = [(cfg, params, t, k) for t, k in enumerate(kinds)]
    rec.rows = _map(_uniform_trial, jobs, cfg.workers)
    false_sep = sum(r["separated"] for r in rec.rows if not r["expected"])
    missed = sum(not r["separated"] for r in rec.rows if r["expected"])
    rec.summary = {"false_separations": false_sep, "missed_separations": missed,
                   "min_rel_gap_non_equivalent": min(r["rel_gap"] for r in rec.rows if r["expected"]),
                   "max_rel_gap_equivalent": max(r["rel_gap"] for r in rec.rows if not r["expected"])}
    rec.config["n_equivalent"] = n_eq
    failures = []
    if false_sep:
        failures.append(f"{false_sep} equivalent pairs separated")
    if missed:
        failures.append(f"{missed} non-equivalent pairs not separated")
    return _finish(rec, t0, failures)


# ---------------------------------------------------------------------------
# timing

SCALING_COLUMNS = ["trial", "n", "median_s", "ratio"]


def run_scaling_benchmark(cfg: ExperimentConfig) -> RunRecord:
    """Median wall time of one PPGN layer per size; ratios for each doubling.

    Runs serially regardless of ``workers`` so timings do not compete.
    """
    t0 = time.perf_counter()
    rec = RunRecord("bench", cfg.echo(), SCALING_COLUMNS)
    rng = substream(cfg.seed, "bench", "params")
    layer = ppgn.init_params(rng, cfg.width, cfg.width, 1, "softplus", fan_in=True).layers[0]
    ppgn.ppgn_layer(np.zeros((2, 2, cfg.width)), layer)  # compile before timing
    prev = None
    for t, n in enumerate(cfg.sizes):
        c = substream(cfg.seed, "bench", "input", n).standard_normal((n, n, cfg.width))
        times = []
        for _ in range(cfg.repeats):
            s = time.perf_counter()
            ppgn.ppgn_layer(c, layer, cfg.combination)
            times.append(time.perf_counter() - s)
        med = float(np.median(times))
        ratio = med / prev[1] if prev is not None and n == 2 * prev[0] else None
        rec.rows.append(dict(trial=t, n=n, median_s=med, ratio=ratio))
        prev = (n, med)
    ratios = [r["ratio"] for r in rec.rows if r["ratio"] is not None]
    rec.summary = {"ratios": ratios}
    lo, hi = cfg.ratio_band
    failures = [f"doubling ratio {r:.2f} outside [{lo:g}, {hi:g}]" for r in ratios if not lo <= r <= hi]
    return _finish(rec, t0, failures)
