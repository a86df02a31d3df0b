"""Robustness-based generalization bounds and the island-averaging identity.

Every exponential of the form ``(2 R sqrt(d) / r) ** k`` is handled in log
space so realistic embedding sizes do not overflow.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

LOG2 = math.log(2.0)
LOG_MAX = math.log(np.finfo(np.float64).max)

GRID_LO, GRID_HI, GRID_N = 1e-6, 1e6, 2000
VARIANTS = ("thm1", "thm2")


def _exp_or_none(log_value: float):
    return math.exp(log_value) if log_value < LOG_MAX else None


def covering_count(R: float, d: int, r: float):
    """Number of ``r``-diameter cells covering a radius-``R`` ball in ``d`` dims.

    Returns ``(log_count, count)``; ``count`` is None when not representable.
    """
    if R <= 0 or r <= 0 or d < 1:
        raise ValueError("need R > 0, r > 0, d >= 1")
    log_l = d * math.log(2.0 * R * math.sqrt(d) / r)
    return log_l, _exp_or_none(log_l)


def _bhc_from_log_k(log_k: float, n: float, delta: float) -> float:
    # sqrt((2 K ln2 + 2 ln(1/delta)) / n) with K = exp(log_k)
    log_a = math.log(2.0 * LOG2) + log_k
    log_inner = np.logaddexp(log_a, math.log(2.0 * math.log(1.0 / delta))) if delta < 1 else log_a
    half = 0.5 * (log_inner - math.log(n))
    return math.exp(half) if half < LOG_MAX else math.inf


def bhc_bound(K: float, n: float, delta: float) -> float:
    """Deviation ``lambda`` of the multinomial concentration inequality."""
    if K < 1 or n <= 0 or not 0 < delta <= 1:
        raise ValueError("need K >= 1, n > 0, 0 < delta <= 1")
    return _bhc_from_log_k(math.log(K), n, delta)


def mlp_robustness(W_norm: float, D: int, n_inputs: int, r: float, R_max: float, d: int):
    """``(epsilon, log L)`` robustness pair of a ReLU MLP over ``n_inputs`` embeddings."""
    if min(W_norm, r, R_max) <= 0 or D < 1 or n_inputs < 1 or d < 1:
        raise ValueError("robustness parameters must be positive")
    eps = math.exp(D * math.log(W_norm) + math.log(r) + 0.5 * math.log(n_inputs))
    log_l = LOG2 + n_inputs * d * math.log(2.0 * R_max * math.sqrt(d) / r)
    return eps, log_l


@dataclass
class BoundParams:
    D: int = 3
    d: int = 18
    T: int = 5
    p: int = 4
    N: float = 20000
    N_z: int = 8
    N_S: int = 24
    R_max: float = 1.0
    W_norm: float = 1.0
    l_M: float = 1.0
    delta: float = 0.05

    def __post_init__(self):
        bad = [k for k in ("D", "d", "T", "p", "N", "N_z", "N_S", "R_max", "W_norm", "l_M")
               if not getattr(self, k) > 0]
        if not 0 < self.delta < 1:
            bad.append("delta")
        if bad:
            raise ValueError(f"invalid bound parameter(s): {', '.join(bad)}")


def _terms(params: BoundParams, r: float, variant: str):
    P = params
    log_ratio = math.log(2.0 * P.R_max * math.sqrt(P.d) / r)
    if variant == "thm2":
        n_in = P.T * P.p + 1
        log_count = math.log(4.0 * P.N_z * P.N_S * LOG2) + P.d * n_in * log_ratio
    elif variant == "thm1":
        n_in = 2
        log_count = math.log(4.0 * P.N_z ** 2 * LOG2) + 2 * P.d * log_ratio
    else:
        raise ValueError(f"variant must be one of {VARIANTS}")
    log_first = 0.5 * math.log(n_in) + P.D * math.log(P.W_norm) + math.log(r)
    log_inner = float(np.logaddexp(log_count, math.log(2.0 * math.log(1.0 / P.delta))))
    log_second = math.log(P.l_M) + 0.5 * (log_inner - math.log(P.N))
    return log_first, log_second


def theorem_bound_at_r(params: BoundParams, r: float, variant: str = "thm2") -> float:
    """Value of the bracketed expression at a fixed cell size ``r`` (inf on overflow)."""
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    a, b = _terms(params, r, variant)
    if max(a, b) >= LOG_MAX - 1:
        return math.inf
    return math.exp(a) + math.exp(b)


def theorem_bound_inf(params: BoundParams, variant: str = "thm2", lo=GRID_LO, hi=GRID_HI,
                      n_grid=GRID_N, n_refine=200):
    """Minimize over ``r``: log grid, then golden-section refinement around the best point.

    Returns ``(r_star, bound)``.
    """
    grid = np.geomspace(lo, hi, n_grid)
    vals = np.array([theorem_bound_at_r(params, r, variant) for r in grid])
    k = int(np.argmin(vals))
    best_r, best = float(grid[k]), float(vals[k])
    a = math.log(grid[max(k - 1, 0)])
    b = math.log(grid[min(k + 1, n_grid - 1)])
    f = lambda x: theorem_bound_at_r(params, math.exp(x), variant)  # noqa: E731
    g = (math.sqrt(5) - 1) / 2
    c, e = b - g * (b - a), a + g * (b - a)
    fc, fe = f(c), f(e)
    for _ in range(n_refine):
        if fc < fe:
            b, e, fe = e, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + g * (b - a)
            fe = f(e)
    for x, fx in ((c, fc), (e, fe)):
        if fx < best:
            best_r, best = math.exp(x), fx
    return best_r, best


def envelope_radius(points) -> float:
    """Largest distance from the centroid (centroid used as the witness point)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise ValueError("envelope radius of an empty set")
    return float(np.linalg.norm(pts - pts.mean(axis=0), axis=1).max())


# ------------------------------------------------------------- islands


class IslandStructureError(ValueError):
    """Graph is not a disjoint union of complete graphs."""


@dataclass
class IslandReport:
    islands: list = field(default_factory=list)
    pairs: list = field(default_factory=list)
    max_island_deviation: float = 0.0
    max_pair_deviation: float = 0.0

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def find_islands(Z) -> list[np.ndarray]:
    """Member lists of each island; raises :class:`IslandStructureError` otherwise."""
    Z = sp.csr_matrix(Z)
    Z.eliminate_zeros()
    H = Z.shape[0]
    diag = Z.diagonal()
    if np.any(diag != 0):
        i = int(np.flatnonzero(diag)[0])
        raise IslandStructureError(f"self-loop on item {i}")
    if np.any(Z.data < 0):
        raise IslandStructureError("negative edge weight")
    n_comp, labels = connected_components(Z, directed=False)
    islands = []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        if members.size < 2:
            raise IslandStructureError(f"item {members[0]} has no edges")
        block = Z[members][:, members].toarray() > 0
        missing = ~block & ~np.eye(members.size, dtype=bool)
        if missing.any():
            a, b = np.argwhere(missing)[0]
            raise IslandStructureError(
                f"edge ({members[a]}, {members[b]}) missing inside component {members.tolist()}")
        islands.append(members)
    return islands if H else []


def _internal(X, members):
    c = X[members].mean(axis=0)
    return c, float(np.linalg.norm(X[members] - c, axis=1).mean())


def _rel(err, ref):
    return err / ref if ref > 0 else err


def prop1_verify(Z, X) -> IslandReport:
    """Check that island averaging shrinks spreads by ``m - 1`` and keeps centres.

    ``X' = g_avg(Z) @ X``; for each island the mean distance to the centre
    must drop by exactly ``m_i - 1`` and distances between island centres
    must be unchanged.
    """
    from .graph import fuse_avg

    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != Z.shape[0]:
        raise ValueError(f"X must have {Z.shape[0]} rows")
    islands = find_islands(Z)
    Xp = np.asarray(fuse_avg(Z) @ X)
    report = IslandReport()
    centers = []
    for k, members in enumerate(islands):
        c, ms = _internal(X, members)
        cp, msp = _internal(Xp, members)
        m = members.size
        dev = _rel(abs(msp * (m - 1) - ms), ms)
        report.islands.append({"island": k, "m": int(m), "ms_before": ms, "ms_after": msp,
                               "ratio": msp / ms if ms > 0 else None,
                               "center_shift": float(np.linalg.norm(cp - c)), "deviation": dev})
        report.max_island_deviation = max(report.max_island_deviation, dev)
        centers.append((c, cp))
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            before = float(np.linalg.norm(centers[i][0] - centers[j][0]))
            after = float(np.linalg.norm(centers[i][1] - centers[j][1]))
            dev = _rel(abs(after - before), before)
            report.pairs.append({"i": i, "j": j, "before": before, "after": after, "deviation": dev})
            report.max_pair_deviation = max(report.max_pair_deviation, dev)
    return report


def island_graph(sizes) -> sp.csr_matrix:
    """Disjoint union of complete graphs with the given sizes."""
    blocks = [np.ones((m, m)) - np.eye(m) for m in sizes]
    return sp.csr_matrix(sp.block_diag(blocks)) if blocks else sp.csr_matrix((0, 0))


def write_bound_sweep(path, rows) -> None:
    """CSV ``param,value,r_star,bound``."""
    with open(path, "w") as fh:
        fh.write("param,value,r_star,bound\n")
        for name, value, r_star, bound in rows:
            fh.write(f"{name},{value!r},{r_star!r},{bound!r}\n")
