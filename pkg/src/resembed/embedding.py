"""Residual embeddings: ``E = W @ C_b + R`` and the partition prototype ``E = P @ C + R``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

DEFAULT_DIM = 18
INIT_SCALE = 0.05


@dataclass
class EmbedParams:
    """Trainable embedding state.

    ``C_b`` has one row per basis vector: ``H`` rows for graph fusion,
    ``I`` rows (one per domain) in partition mode.
    """

    C_b: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.C_b = np.asarray(self.C_b, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        if self.C_b.ndim != 2 or self.R.ndim != 2 or self.C_b.shape[1] != self.R.shape[1]:
            raise ValueError(f"shape mismatch: C_b {self.C_b.shape}, R {self.R.shape}")
        if not (np.isfinite(self.C_b).all() and np.isfinite(self.R).all()):
            raise ValueError("embedding parameters must be finite")

    @property
    def d(self) -> int:
        return self.R.shape[1]

    @property
    def n_items(self) -> int:
        return self.R.shape[0]

    @classmethod
    def init(cls, n_items: int, d: int = DEFAULT_DIM, n_basis: int | None = None,
             rng: np.random.Generator | int | None = None, scale: float = INIT_SCALE):
        rng = np.random.default_rng(rng)
        n_basis = n_items if n_basis is None else n_basis
        C_b = rng.uniform(-scale, scale, size=(n_basis, d))
        R = rng.uniform(-scale, scale, size=(n_items, d))
        return cls(C_b, R)

    def copy(self) -> "EmbedParams":
        return EmbedParams(self.C_b.copy(), self.R.copy())


def partition_matrix(assignment, n_domains: int | None = None) -> sp.csr_matrix:
    """One-hot item-by-domain matrix ``P``."""
    assignment = np.asarray(assignment, dtype=np.int64)
    if n_domains is None:
        n_domains = int(assignment.max()) + 1 if assignment.size else 0
    if assignment.size and (assignment.min() < 0 or assignment.max() >= n_domains):
        raise ValueError(f"domain index outside [0, {n_domains})")
    H = assignment.size
    return sp.csr_matrix((np.ones(H), assignment, np.arange(H + 1)), shape=(H, n_domains))


def _check_W(W, params: EmbedParams) -> sp.csr_matrix:
    W = sp.csr_matrix(W, dtype=np.float64)
    if W.shape != (params.n_items, params.C_b.shape[0]):
        raise ValueError(f"fusion matrix {W.shape} does not match "
                         f"R {params.R.shape} / C_b {params.C_b.shape}")
    return W


def resolve(W, params: EmbedParams) -> np.ndarray:
    """Final embedding table; a ``None`` fusion matrix means ``E = R``."""
    if W is None:
        return params.R.copy()
    W = _check_W(W, params)
    return np.asarray(W @ params.C_b) + params.R


def resolve_rows(W, params: EmbedParams, rows: np.ndarray) -> np.ndarray:
    if W is None:
        return params.R[rows]
    return np.asarray(W[rows] @ params.C_b) + params.R[rows]


def prototype_resolve(assignment, C: np.ndarray, R: np.ndarray) -> np.ndarray:
    C = np.asarray(C, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    P = partition_matrix(assignment, C.shape[0])
    if R.shape != (P.shape[0], C.shape[1]):
        raise ValueError(f"R shape {R.shape} does not match {P.shape[0]} items x {C.shape[1]}")
    return np.asarray(P @ C) + R


def backward_embedding(G_E: np.ndarray, W, params: EmbedParams, lam: float = 0.0):
    """Dense gradients of ``loss(E) + lam * ||R||_F^2`` for ``C_b`` and ``R``.

    ``W`` is treated as a constant (stop-gradient for attention fusion).
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    G_E = np.asarray(G_E, dtype=np.float64)
    if G_E.shape != params.R.shape:
        raise ValueError(f"gradient shape {G_E.shape} != {params.R.shape}")
    G_R = G_E + 2.0 * lam * params.R
    if W is None:
        return np.zeros_like(params.C_b), G_R
    W = _check_W(W, params)
    return np.asarray(W.T @ G_E), G_R


def att_backward(G_E_rows: np.ndarray, Z: sp.csr_matrix, W_rows: sp.csr_matrix,
                 C_b: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Extra basis gradient from differentiating through the attention softmax.

    ``W_rows`` holds attention weights for ``rows`` (same sparsity as
    ``Z[rows]``). Returns a dense ``C_b``-shaped gradient of
    ``sum_k G_E_rows[k] . (W_rows @ C_b)[k]`` with respect to the scores only.
    """
    counts = np.diff(W_rows.indptr)
    owner_local = np.repeat(np.arange(len(rows)), counts)
    owner = np.asarray(rows)[owner_local]
    nbr = W_rows.indices
    a = W_rows.data
    dA = np.einsum("ij,ij->i", G_E_rows[owner_local], C_b[nbr])
    mean = np.bincount(owner_local, weights=a * dA, minlength=len(rows))
    dS = a * (dA - mean[owner_local])
    G = np.zeros_like(C_b)
    np.add.at(G, owner, dS[:, None] * C_b[nbr])
    np.add.at(G, nbr, dS[:, None] * C_b[owner])
    return G


def write_embeddings(path, E: np.ndarray) -> None:
    E = np.asarray(E, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write(",".join(["item_id"] + [f"e_{k}" for k in range(E.shape[1])]) + "\n")
        for i, row in enumerate(E):
            fh.write(",".join([str(i)] + [repr(float(v)) for v in row]) + "\n")


def read_embeddings(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[np.argsort(data[:, 0]), 1:]
