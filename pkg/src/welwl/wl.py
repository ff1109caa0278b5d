"""Exact 1-WL and folklore 2-WL colour refinement.

HASH is an injective registry (:class:`ColorTable`): every distinct byte key
gets the next integer id, so collisions are impossible.  Keys start with a
one-byte tag naming what produced them, which keeps the namespaces of initial
colours, aggregated multisets, combined colours and global labels disjoint
inside one shared table.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "ABSENT",
    "ColorTable",
    "Coloring",
    "WLGraph",
    "PairVerdict",
    "init_coloring",
    "refine_2wl",
    "global_label",
    "run_2wl_pair",
    "stable_refinement",
    "init_node_coloring",
    "refine_1wl",
    "run_1wl_pair",
    "partition_refines",
]

ABSENT = b"\x00absent"

_TAG_NODE = b"D"      # diagonal pair (i, i): node feature
_TAG_EDGE = b"E"      # off-diagonal pair: edge feature
_TAG_AGG = b"A"       # sorted multiset of (C(i,j), C(j,k)) pairs
_TAG_COMB = b"C"      # (previous colour, aggregated colour)
_TAG_GLOBAL = b"G"    # sorted multiset of final colours
_TAG_1WL = b"N"       # 1-WL node update
_TAG_1WL_INIT = b"V"  # 1-WL initial node colour

_ID_LIMIT = 1 << 32


class ColorTable:
    """Injective map from canonical byte keys to dense integer ids.

    Not thread safe; one table belongs to one refinement session.
    """

    def __init__(self):
        self._ids: dict[bytes, int] = {}
        self._keys: list[bytes] = []
        self._digests: dict[int, str] = {}

    def __len__(self):
        return len(self._keys)

    def intern(self, key: bytes) -> int:
        cid = self._ids.get(key)
        if cid is None:
            cid = len(self._keys)
            if cid >= _ID_LIMIT:
                raise OverflowError("colour table exhausted 32-bit id space")
            self._ids[key] = cid
            self._keys.append(key)
        return cid

    def key(self, cid: int) -> bytes:
        return self._keys[cid]

    def unfold(self, cid: int):
        """Recursive, id-free description of a colour.

        Returns nested tuples whose leaves are the original feature bytes, so
        two colours from different tables (or processes) unfold equal iff they
        were produced by the same computation on equal inputs.
        """
        key = self._keys[cid]
        tag, body = key[:1], key[1:]
        if tag in (_TAG_NODE, _TAG_EDGE, _TAG_1WL_INIT):
            return (tag.decode(), body)
        words = np.frombuffer(body, dtype=np.uint64)
        if tag == _TAG_AGG:
            return ("A", tuple((self.unfold(int(w >> 32)), self.unfold(int(w & 0xFFFFFFFF))) for w in words))
        if tag in (_TAG_COMB, _TAG_GLOBAL):
            return (tag.decode(), tuple(self.unfold(int(w)) for w in words))
        if tag == _TAG_1WL:
            own = self.unfold(int(words[0]))
            nbrs = tuple((self.unfold(int(w >> 32)), self.unfold(int(w & 0xFFFFFFFF))) for w in words[1:])
            return ("N", own, nbrs)
        raise ValueError(f"corrupt key tag {tag!r}")

    def digest(self, cid: int) -> str:
        """SHA-256 of the recursive unfolding; stable across runs."""
        d = self._digests.get(cid)
        if d is not None:
            return d
        key = self._keys[cid]
        tag, body = key[:1], key[1:]
        h = hashlib.sha256(tag)
        if tag in (_TAG_NODE, _TAG_EDGE, _TAG_1WL_INIT):
            h.update(body)
        else:
            words = np.frombuffer(body, dtype=np.uint64)
            paired = tag == _TAG_AGG or tag == _TAG_1WL
            for pos, w in enumerate(words):
                w = int(w)
                if paired and not (tag == _TAG_1WL and pos == 0):
                    h.update(self.digest(w >> 32).encode())
                    h.update(self.digest(w & 0xFFFFFFFF).encode())
                else:
                    h.update(self.digest(w).encode())
        d = h.hexdigest()
        self._digests[cid] = d
        return d


@dataclass(frozen=True)
class WLGraph:
    """A graph as ``n * n`` canonical pair-feature byte strings (row-major).

    Entry ``i * n + i`` carries the node feature of ``i``; ``i * n + j`` the
    feature of the ordered edge ``(i, j)``, or :data:`ABSENT`.  ``tensor`` is
    an optional numeric ``(n, n, D)`` view of the same graph for PPGN.
    """

    n: int
    pair_features: tuple[bytes, ...]
    tensor: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("graph needs at least one node")
        if len(self.pair_features) != self.n * self.n:
            raise ValueError(f"expected {self.n * self.n} pair features, got {len(self.pair_features)}")
        object.__setattr__(self, "pair_features", tuple(self.pair_features))

    def feature(self, i: int, j: int) -> bytes:
        return self.pair_features[i * self.n + j]

    def has_edge(self, i: int, j: int) -> bool:
        return i != j and self.feature(i, j) != ABSENT

    def permuted(self, perm: Sequence[int]) -> "WLGraph":
        """Relabel so new node ``i`` is old node ``perm[i]``."""
        perm = np.asarray(perm)
        n = self.n
        feats = tuple(self.feature(int(perm[i]), int(perm[j])) for i in range(n) for j in range(n))
        t = None if self.tensor is None else self.tensor[np.ix_(perm, perm)]
        return WLGraph(n, feats, t)

    @classmethod
    def from_adjacency(cls, adj, node_labels: Sequence[bytes] | None = None) -> "WLGraph":
        """Unlabelled (or node-labelled) simple graph from a 0/1 matrix.

        The numeric view has two channels: adjacency and a diagonal indicator.
        """
        a = np.asarray(adj)
        n = a.shape[0]
        feats = []
        for i in range(n):
            for j in range(n):
                if i == j:
                    feats.append(node_labels[i] if node_labels is not None else b"node")
                else:
                    feats.append(b"edge" if a[i, j] else ABSENT)
        tensor = np.stack([(a != 0).astype(np.float64) * (1 - np.eye(n)), np.eye(n)], axis=-1)
        return cls(n, tuple(feats), tensor)


@dataclass(frozen=True)
class Coloring:
    n: int
    colors: np.ndarray  # (n, n) int64 colour ids
    round: int = 0

    def __post_init__(self):
        if self.colors.shape != (self.n, self.n):
            raise ValueError(f"colour array shape {self.colors.shape} does not match n={self.n}")

    def multiset(self) -> np.ndarray:
        return np.sort(self.colors, axis=None)

    def n_classes(self) -> int:
        return int(np.unique(self.colors).size)


def _ids_bytes(ids) -> bytes:
    return np.asarray(ids, dtype=np.uint64).tobytes()


def init_coloring(g: WLGraph, table: ColorTable) -> Coloring:
    n = g.n
    colors = np.empty((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(n):
            tag = _TAG_NODE if i == j else _TAG_EDGE
            colors[i, j] = table.intern(tag + g.feature(i, j))
    return Coloring(n, colors, 0)


def refine_2wl(c: Coloring, table: ColorTable) -> Coloring:
    """One folklore 2-WL round: aggregate ``{{(C(i,j), C(j,k))}}_j``, then combine."""
    C = c.colors.astype(np.uint64)
    n = c.n
    # codes[i, k, j] = C[i, j] << 32 | C[j, k]; sorting the packed words is the
    # lexicographic sort of the pairs.
    codes = (C[:, None, :] << np.uint64(32)) | C.T[None, :, :]
    codes.sort(axis=2)
    new = np.empty((n, n), dtype=np.int64)
    for i in range(n):
        for k in range(n):
            agg = table.intern(_TAG_AGG + codes[i, k].tobytes())
            new[i, k] = table.intern(_TAG_COMB + _ids_bytes((c.colors[i, k], agg)))
    return Coloring(n, new, c.round + 1)


def global_label(c: Coloring, table: ColorTable) -> int:
    return table.intern(_TAG_GLOBAL + _ids_bytes(c.multiset()))


def partition_refines(fine: np.ndarray, coarse: np.ndarray) -> bool:
    """True when equal colours in ``fine`` imply equal colours in ``coarse``."""
    fine = np.asarray(fine).ravel()
    coarse = np.asarray(coarse).ravel()
    seen: dict[int, int] = {}
    for f, c in zip(fine.tolist(), coarse.tolist()):
        if seen.setdefault(f, c) != c:
            return False
    return True


@dataclass(frozen=True)
class PairVerdict:
    label_a: int | None
    label_b: int | None
    separated: bool
    first_separating_round: int | None
    rounds_run: int = 0


def run_2wl_pair(ga: WLGraph, gb: WLGraph, rounds: int, table: ColorTable | None = None) -> PairVerdict:
    """Refine both graphs against one shared table for up to ``rounds`` rounds.

    Stops early once the joint partition of both graphs is stable: later rounds
    only rename colours, so neither the verdict nor the first separating round
    can change.  Graphs of different sizes are separated at round -1.
    """
    if ga.n != gb.n:
        return PairVerdict(None, None, True, -1, 0)
    table = ColorTable() if table is None else table
    ca, cb = init_coloring(ga, table), init_coloring(gb, table)
    first = None if np.array_equal(ca.multiset(), cb.multiset()) else 0
    n_joint = np.unique(np.concatenate([ca.colors.ravel(), cb.colors.ravel()])).size
    t = 0
    while t < rounds:
        ca, cb = refine_2wl(ca, table), refine_2wl(cb, table)
        t += 1
        if first is None and not np.array_equal(ca.multiset(), cb.multiset()):
            first = t
        joint = np.unique(np.concatenate([ca.colors.ravel(), cb.colors.ravel()])).size
        if joint == n_joint:
            break
        n_joint = joint
    la, lb = global_label(ca, table), global_label(cb, table)
    return PairVerdict(la, lb, first is not None, first, t)


def stable_refinement(g: WLGraph, table: ColorTable | None = None) -> tuple[Coloring, int]:
    """Refine until the partition stops changing.

    Returns the stable colouring and the first round ``t`` whose partition
    equals that of round ``t + 1``.
    """
    table = ColorTable() if table is None else table
    c = init_coloring(g, table)
    k = c.n_classes()
    limit = g.n * g.n
    for t in range(limit + 1):
        nxt = refine_2wl(c, table)
        k_next = nxt.n_classes()
        if k_next == k:
            return c, t
        c, k = nxt, k_next
    raise AssertionError("2-WL failed to stabilise within n^2 rounds")


# ---------------------------------------------------------------------------
# 1-WL baseline


def init_node_coloring(g: WLGraph, table: ColorTable) -> np.ndarray:
    return np.array([table.intern(_TAG_1WL_INIT + g.feature(i, i)) for i in range(g.n)], dtype=np.int64)


def refine_1wl(colors: np.ndarray, g: WLGraph, table: ColorTable) -> np.ndarray:
    """Node update from the multiset of (edge feature, neighbour colour) pairs."""
    n = g.n
    new = np.empty(n, dtype=np.int64)
    for i in range(n):
        words = []
        for j in range(n):
            if g.has_edge(i, j):
                e = table.intern(_TAG_EDGE + g.feature(i, j))
                words.append((e << 32) | int(colors[j]))
        words.sort()
        new[i] = table.intern(_TAG_1WL + _ids_bytes([int(colors[i])] + words))
    return new


def run_1wl_pair(ga: WLGraph, gb: WLGraph, rounds: int, table: ColorTable | None = None) -> PairVerdict:
    if ga.n != gb.n:
        return PairVerdict(None, None, True, -1, 0)
    table = ColorTable() if table is None else table
    ca, cb = init_node_coloring(ga, table), init_node_coloring(gb, table)

    def differs(x, y):
        return not np.array_equal(np.sort(x), np.sort(y))

    first = 0 if differs(ca, cb) else None
    k = np.unique(np.concatenate([ca, cb])).size
    t = 0
    while t < rounds:
        ca, cb = refine_1wl(ca, ga, table), refine_1wl(cb, gb, table)
        t += 1
        if first is None and differs(ca, cb):
            first = t
        k_next = np.unique(np.concatenate([ca, cb])).size
        if k_next == k:
            break
        k = k_next
    la = table.intern(_TAG_GLOBAL + _ids_bytes(np.sort(ca)))
    lb = table.intern(_TAG_GLOBAL + _ids_bytes(np.sort(cb)))
    return PairVerdict(la, lb, first is not None, first, t)
