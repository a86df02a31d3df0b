"""Item interest graph: windowed co-occurrence counting and fusion operators.

Graphs and fusion matrices are ``scipy.sparse.csr_matrix`` objects of shape
``(H, H)`` with sorted indices, no explicit zeros and an empty diagonal.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

logger = logging.getLogger(__name__)

DEFAULT_DELTA = 2
DEFAULT_K = 8

FUSIONS = ("avg", "gcn", "att")


def _clean(Z) -> sp.csr_matrix:
    Z = sp.csr_matrix(Z, dtype=np.float64, copy=True)
    Z.setdiag(0)
    Z.eliminate_zeros()
    Z.sum_duplicates()
    Z.sort_indices()
    return Z


def _flatten(sequences: Iterable[Sequence[int]], n_items: int):
    seqs = [np.asarray(s, dtype=np.int64).ravel() for s in sequences]
    if not seqs:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    flat = np.concatenate(seqs)
    if flat.size and (flat.min() < 0 or flat.max() >= n_items):
        bad = flat[(flat < 0) | (flat >= n_items)][0]
        raise ValueError(f"item id {bad} outside [0, {n_items})")
    owner = np.repeat(np.arange(len(seqs)), [len(s) for s in seqs])
    return flat, owner


def build_cooccurrence(sequences: Iterable[Sequence[int]], delta: int = DEFAULT_DELTA,
                       n_items: int | None = None) -> sp.csr_matrix:
    """Count windowed co-occurrences of distinct items.

    Every ordered pair of positions at distance ``1..delta`` inside one
    sequence adds one to ``Z[item(center), item(other)]`` unless both hold
    the same item. The result is symmetric.
    """
    if delta < 1:
        raise ValueError(f"delta must be >= 1, got {delta}")
    sequences = list(sequences)
    if n_items is None:
        n_items = 1 + max((int(max(s)) for s in sequences if len(s)), default=-1)
    flat, owner = _flatten(sequences, n_items)
    rows, cols = [], []
    for off in range(1, delta + 1):
        if flat.size <= off:
            break
        a, b = flat[:-off], flat[off:]
        keep = (owner[:-off] == owner[off:]) & (a != b)
        rows += [a[keep], b[keep]]
        cols += [b[keep], a[keep]]
    if rows:
        r, c = np.concatenate(rows), np.concatenate(cols)
    else:
        r = c = np.empty(0, np.int64)
    Z = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(n_items, n_items)).tocsr()
    Z.sum_duplicates()
    Z.sort_indices()
    return Z


def prune_topk(Z, K: int = DEFAULT_K) -> sp.csr_matrix:
    """Keep the ``K`` largest entries per row; ties keep the smaller column."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    Z = _clean(Z)
    coo = Z.tocoo()
    order = np.lexsort((coo.col, -coo.data, coo.row))
    row_start = Z.indptr[coo.row[order]]
    rank = np.arange(order.size) - row_start
    keep = order[rank < K]
    out = sp.coo_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=Z.shape).tocsr()
    out.sort_indices()
    return out


def symmetrize(Z) -> sp.csr_matrix:
    """Entrywise ``max(Z, Z.T)``."""
    Z = _clean(Z)
    return _clean(Z.maximum(Z.T))


def fuse_avg(Z) -> sp.csr_matrix:
    Z = _clean(Z)
    counts = np.diff(Z.indptr)
    W = Z.copy()
    W.data = np.repeat(1.0 / np.maximum(counts, 1), counts)
    return W


def fuse_gcn(Z) -> sp.csr_matrix:
    """Symmetric degree normalization ``D^-1/2 Z D^-1/2``; zero-degree rows stay empty."""
    Z = _clean(Z)
    deg = np.asarray(Z.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    W = Z.copy()
    rows = np.repeat(np.arange(Z.shape[0]), np.diff(Z.indptr))
    W.data = W.data * (inv[rows] * inv[Z.indices])  # grouped so symmetric input stays exactly symmetric
    return W


def att_rows(Z: sp.csr_matrix, C_b: np.ndarray, rows: np.ndarray | None = None) -> sp.csr_matrix:
    """Attention coefficients for a subset of rows of an already-clean ``Z``.

    Returns a ``(len(rows), H)`` matrix whose row ``k`` is the softmax of
    ``C_b[rows[k]] . C_b[j]`` over the neighbours ``j`` of ``rows[k]``.
    """
    sub = Z if rows is None else Z[rows]
    counts = np.diff(sub.indptr)
    owner = np.repeat(np.arange(sub.shape[0]) if rows is None else np.asarray(rows), counts)
    data = np.einsum("ij,ij->i", C_b[owner], C_b[sub.indices])
    if data.size:
        starts = sub.indptr[:-1][counts > 0]
        seg = np.repeat(np.arange(starts.size), counts[counts > 0])
        data = np.exp(data - np.maximum.reduceat(data, starts)[seg])
        data /= np.add.reduceat(data, starts)[seg]
    return sp.csr_matrix((data, sub.indices.copy(), sub.indptr.copy()), shape=sub.shape)


def fuse_att(Z, C_b: np.ndarray) -> sp.csr_matrix:
    Z = _clean(Z)
    C_b = check_array(C_b, dtype=np.float64)
    if C_b.shape[0] != Z.shape[1]:
        raise ValueError(f"basis has {C_b.shape[0]} rows, graph has {Z.shape[1]} items")
    return att_rows(Z, C_b)


def fuse(Z, mode: str, C_b: np.ndarray | None = None) -> sp.csr_matrix:
    if mode == "avg":
        return fuse_avg(Z)
    if mode == "gcn":
        return fuse_gcn(Z)
    if mode == "att":
        if C_b is None:
            raise ValueError("att fusion needs the central basis")
        return fuse_att(Z, C_b)
    raise ValueError(f"unknown fusion {mode!r}; expected one of {FUSIONS}")


def interest_graph(sequences, n_items: int, delta: int = DEFAULT_DELTA,
                   K: int = DEFAULT_K) -> sp.csr_matrix:
    """Build -> prune -> symmetrize."""
    return symmetrize(prune_topk(build_cooccurrence(sequences, delta, n_items), K))


def spectral_radius(W, n_iter: int = 200, seed: int = 0) -> float:
    """Power-iteration estimate of the largest |eigenvalue| of a symmetric matrix."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(W.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iter):
        w = W @ v
        lam = np.linalg.norm(w)
        if lam == 0:
            return 0.0
        v = w / lam
    return float(lam)


class InterestGraph(TransformerMixin, BaseEstimator):
    """Co-occurrence graph + fusion operator as a transformer.

    ``fit`` builds the pruned, symmetrized graph from click sequences.
    ``transform`` maps an ``(H, d)`` basis matrix ``X`` to ``g(Z) @ X``.

    Parameters
    ----------
    delta : int
        Window radius.
    K : int
        Neighbours kept per item.
    fusion : {"avg", "gcn", "att"}
    n_items : int or None
        Item count; inferred from the largest id when None.
    """

    def __init__(self, delta=DEFAULT_DELTA, K=DEFAULT_K, fusion="avg", n_items=None):
        self.delta = delta
        self.K = K
        self.fusion = fusion
        self.n_items = n_items

    def fit(self, X, y=None):
        if self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}")
        seqs = list(X)
        self.graph_ = interest_graph(seqs, self.n_items if self.n_items is not None
                                     else 1 + max((int(max(s)) for s in seqs if len(s)), default=-1),
                                     self.delta, self.K)
        self.n_items_ = self.graph_.shape[0]
        return self

    def fusion_matrix(self, basis=None):
        check_is_fitted(self, "graph_")
        return fuse(self.graph_, self.fusion, basis)

    def transform(self, X):
        check_is_fitted(self, "graph_")
        X = check_array(X, dtype=np.float64)
        if X.shape[0] != self.n_items_:
            raise ValueError(f"expected {self.n_items_} rows, got {X.shape[0]}")
        return np.asarray(self.fusion_matrix(X) @ X)


# ---------------------------------------------------------------- file formats

def write_graph(Z, path) -> None:
    Z = _clean(Z)
    coo = Z.tocoo()
    with open(path, "w") as fh:
        fh.write(f"H {Z.shape[0]}\n")
        for i, j, w in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {float(w)!r}\n")


def read_graph(path) -> sp.csr_matrix:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 2 or head[0] != "H":
            raise ValueError(f"{path}: first line must be 'H <count>'")
        n = int(head[1])
        rows, cols, vals = [], [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            i, j, w = line.split()
            rows.append(int(i))
            cols.append(int(j))
            vals.append(float(w))
    if rows and (max(rows) >= n or max(cols) >= n):
        raise ValueError(f"{path}: edge endpoint outside [0, {n})")
    return _clean(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))


def read_sequences(path) -> list[tuple[str, list[int]]]:
    """JSON Lines ``{"user": ..., "items": [...]}``."""
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            out.append((str(rec["user"]), [int(i) for i in rec["items"]]))
    return out


def write_sequences(path, sequences) -> None:
    with open(path, "w") as fh:
        for user, items in sequences:
            fh.write(json.dumps({"user": str(user), "items": [int(i) for i in items]}) + "\n")
