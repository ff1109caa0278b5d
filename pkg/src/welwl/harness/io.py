"""Graph-pair corpora, point-cloud files and run records.

Graph JSON::

    {"n": 4, "pairs": [{"i": 0, "j": 1, "label": "edge"}, {"i": 2, "j": 2, "label": [0.5]}]}

Unlisted pairs carry the absent label.  A corpus file is a JSON list whose
entries are ``[graph_a, graph_b]`` or ``{"id": ..., "a": graph_a, "b": graph_b}``.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import PosVel
from ..wl import ABSENT, WLGraph

__all__ = [
    "CorpusError",
    "LoadWarning",
    "GraphCorpus",
    "encode_label",
    "decode_label",
    "graph_from_json",
    "graph_to_json",
    "load_graph",
    "load_graph_pairs",
    "save_graph_pairs",
    "load_posvel",
    "save_posvel",
    "RunRecord",
    "read_csv_rows",
]


class CorpusError(ValueError):
    """Unreadable input file."""


@dataclass(frozen=True)
class LoadWarning:
    entry: int
    reason: str

    def to_dict(self) -> dict:
        return {"entry": self.entry, "reason": self.reason}


class GraphCorpus(list):
    """List of ``(WLGraph, WLGraph)`` pairs plus per-entry warnings and ids."""

    def __init__(self, pairs=(), warnings=(), ids=()):
        super().__init__(pairs)
        self.warnings: list[LoadWarning] = list(warnings)
        self.ids: list = list(ids)


# labels: strings become b"s" + utf-8, numeric vectors b"f" + float64 bytes


def encode_label(label) -> bytes:
    if isinstance(label, str):
        return b"s" + label.encode("utf-8")
    if isinstance(label, (int, float)) and not isinstance(label, bool):
        label = [label]
    if isinstance(label, (list, tuple)) and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in label):
        return b"f" + struct.pack(f"<{len(label)}d", *label)
    raise ValueError(f"label must be a string or a list of numbers, got {label!r}")


def decode_label(key: bytes):
    if key[:1] == b"s":
        return key[1:].decode("utf-8")
    if key[:1] == b"f":
        return list(struct.unpack(f"<{(len(key) - 1) // 8}d", key[1:]))
    raise ValueError(f"not an encoded label: {key!r}")


def _numeric_width(feats_lists) -> int:
    return max((len(decode_label(f)) for feats in feats_lists for f in feats
                if f != ABSENT and f[:1] == b"f"), default=0)


def _numeric_view(n: int, feats, vocab: list[str], width: int | None = None) -> np.ndarray:
    """Channels: off-diagonal presence, diagonal indicator, string one-hot, numeric values."""
    if width is None:
        width = _numeric_width([feats])
    t = np.zeros((n, n, 2 + len(vocab) + width))
    index = {s: k for k, s in enumerate(vocab)}
    for p, f in enumerate(feats):
        i, j = divmod(p, n)
        t[i, j, 1] = float(i == j)
        if f == ABSENT:
            continue
        if i != j:
            t[i, j, 0] = 1.0
        lab = decode_label(f)
        if isinstance(lab, str):
            t[i, j, 2 + index[lab]] = 1.0
        else:
            t[i, j, 2 + len(vocab):2 + len(vocab) + len(lab)] = lab
    return t


def _parse_graph(obj) -> tuple[int, list[bytes]]:
    if not isinstance(obj, dict) or "n" not in obj:
        raise ValueError("graph must be an object with an 'n' field")
    n = obj["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ValueError(f"'n' must be a positive integer, got {n!r}")
    feats = [ABSENT] * (n * n)
    for e in obj.get("pairs", []):
        if not isinstance(e, dict) or not {"i", "j", "label"} <= e.keys():
            raise ValueError(f"pair entry needs i, j and label: {e!r}")
        i, j = e["i"], e["j"]
        if not (isinstance(i, int) and isinstance(j, int) and 0 <= i < n and 0 <= j < n):
            raise ValueError(f"pair index ({i!r}, {j!r}) outside [0, {n})")
        feats[i * n + j] = encode_label(e["label"])
    return n, feats


def _vocab(feats_lists) -> list[str]:
    return sorted({decode_label(f) for feats in feats_lists for f in feats
                   if f != ABSENT and f[:1] == b"s"})


def graph_from_json(obj, vocab: list[str] | None = None) -> WLGraph:
    n, feats = _parse_graph(obj)
    vocab = _vocab([feats]) if vocab is None else vocab
    return WLGraph(n, tuple(feats), _numeric_view(n, feats, vocab))


def graph_to_json(g: WLGraph) -> dict:
    pairs = []
    for i in range(g.n):
        for j in range(g.n):
            f = g.feature(i, j)
            if f != ABSENT:
                pairs.append({"i": i, "j": j, "label": decode_label(f)})
    return {"n": g.n, "pairs": pairs}


def _read_json(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        raise CorpusError(f"{path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if text else ""
        raise CorpusError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n  {line}") from exc


def load_graph(path) -> WLGraph:
    try:
        return graph_from_json(_read_json(Path(path)))
    except ValueError as exc:
        if isinstance(exc, CorpusError):
            raise
        raise CorpusError(f"{path}: {exc}") from exc


def load_graph_pairs(path) -> GraphCorpus:
    """Read a corpus file, or every ``*.json`` file of a directory in name order.

    Bad entries are skipped with a :class:`LoadWarning` instead of aborting.
    String labels share one vocabulary, and numeric labels one width, across
    the whole corpus so numeric views of different graphs have matching channels.
    """
    path = Path(path)
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    raw = []
    for f in files:
        data = _read_json(f)
        if isinstance(data, dict) and "corpus" in data:
            data = data["corpus"]
        if not isinstance(data, list):
            raise CorpusError(f"{f}: corpus must be a JSON list of graph pairs")
        raw += data
    parsed, warnings, ids = [], [], []
    for k, entry in enumerate(raw):
        try:
            if isinstance(entry, dict):
                pid, a, b = entry.get("id", k), entry["a"], entry["b"]
            elif isinstance(entry, list) and len(entry) == 2:
                pid, (a, b) = k, entry
            else:
                raise ValueError("entry must be [graph_a, graph_b] or {a, b}")
            na, fa = _parse_graph(a)
            nb, fb = _parse_graph(b)
            if na != nb:
                raise ValueError(f"graphs in a pair differ in size ({na} vs {nb})")
        except (KeyError, TypeError, ValueError) as exc:
            warnings.append(LoadWarning(k, f"{type(exc).__name__}: {exc}"))
            continue
        parsed.append((na, fa, fb))
        ids.append(pid)
    every = [fa for _, fa, _ in parsed] + [fb for _, _, fb in parsed]
    vocab, width = _vocab(every), _numeric_width(every)
    pairs = [(WLGraph(n, tuple(fa), _numeric_view(n, fa, vocab, width)),
              WLGraph(n, tuple(fb), _numeric_view(n, fb, vocab, width))) for n, fa, fb in parsed]
    return GraphCorpus(pairs, warnings, ids)


def save_graph_pairs(path, pairs) -> None:
    Path(path).write_text(json.dumps([[graph_to_json(a), graph_to_json(b)] for a, b in pairs]))


def load_posvel(path) -> PosVel:
    d = _read_json(Path(path))
    try:
        return PosVel.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"{path}: {exc}") from exc


def save_posvel(path, xv: PosVel) -> None:
    Path(path).write_text(json.dumps(xv.to_dict()))


# ---------------------------------------------------------------------------
# results


@dataclass
class RunRecord:
    """Rows of one experiment plus the config that reproduces them.

    ``columns`` fixes the CSV header.  Rows are kept sorted by ``trial`` so
    records assembled from concurrent workers are identical to serial runs.
    """

    experiment: str
    config: dict
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    passed: bool | None = None
    failures: list[str] = field(default_factory=list)

    def sort_rows(self) -> None:
        self.rows.sort(key=lambda r: r["trial"])

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment, "config": self.config, "columns": self.columns,
            "rows": self.rows, "summary": self.summary, "timings": self.timings,
            "passed": self.passed, "failures": self.failures,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.columns, extrasaction="raise")
            w.writeheader()
            for r in self.rows:
                # repr keeps every float bit-exact through the text round trip
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})

    def write(self, path, fmt: str | None = None) -> None:
        fmt = fmt or ("json" if str(path).endswith(".json") else "csv")
        if fmt == "json":
            self.write_json(path)
        elif fmt == "csv":
            self.write_csv(path)
        else:
            raise ValueError(f"unknown format {fmt!r}")


def _cell(s: str):
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return {"True": True, "False": False, "": None}.get(s, s)


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: _cell(v) for k, v in r.items()} for r in csv.DictReader(fh)]
