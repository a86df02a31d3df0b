"""Synthetic clicks from the interest delay model.

A user's history is ``p`` periods of ``T`` clicks; each period's clicks come
from one interest domain, and the period domains form one sequence drawn from
a fixed set of allowed sequences. A clean label says whether the target's
domain occurs in that sequence; labels are then flipped with rate ``eta``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import CtrData


@dataclass
class SynthConfig:
    H: int = 2000
    N_z: int = 8
    T: int = 5
    p: int = 4
    N: int = 20000
    n_test: int = 4000
    N_S: int = 24
    eta: float = 0.1
    target_positive_rate: float = 0.5
    within_domain: str = "uniform"
    zipf_s: float = 1.1
    seed: int = 0

    def __post_init__(self):
        checks = {
            "H": self.H >= self.N_z >= 1,
            "N_z": self.N_z >= 1,
            "T": self.T >= 1,
            "p": self.p >= 1,
            "N": self.N >= 1,
            "n_test": self.n_test >= 0,
            "N_S": 1 <= self.N_S <= self.N_z ** self.p,
            "eta": 0 <= self.eta < 0.5,
            "target_positive_rate": 0 <= self.target_positive_rate <= 1,
            "within_domain": self.within_domain in ("uniform", "zipf"),
            "zipf_s": self.zipf_s > 0,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"invalid synthetic config field(s): {', '.join(bad)}")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class DomainSpec:
    """Disjoint item-to-domain assignment plus within-domain click probabilities."""

    assignment: np.ndarray
    within_domain: str = "uniform"
    zipf_s: float = 1.1

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        counts = np.bincount(self.assignment)
        if self.assignment.size == 0 or (counts == 0).any():
            raise ValueError("every domain needs at least one item")

    @property
    def H(self) -> int:
        return self.assignment.size

    @property
    def N_z(self) -> int:
        return int(self.assignment.max()) + 1

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def probs(self, k: int) -> np.ndarray:
        n = self.members(k).size
        if self.within_domain == "uniform":
            return np.full(n, 1.0 / n)
        w = 1.0 / np.arange(1, n + 1) ** self.zipf_s
        return w / w.sum()

    @classmethod
    def blocks(cls, H: int, N_z: int, within_domain="uniform", zipf_s=1.1) -> "DomainSpec":
        """Contiguous, near-equal blocks of item ids."""
        return cls(np.arange(H) * N_z // H, within_domain, zipf_s)


def oracle_partition(domains: DomainSpec) -> np.ndarray:
    return domains.assignment.copy()


def make_sequence_set(N_z: int, p: int, N_S: int, rng) -> np.ndarray:
    """``N_S`` distinct hidden-state sequences of length ``p``."""
    if N_S > N_z ** p:
        raise ValueError(f"only {N_z ** p} distinct sequences exist, asked for {N_S}")
    rng = np.random.default_rng(rng)
    seen, out = set(), []
    while len(out) < N_S:
        s = tuple(int(v) for v in rng.integers(N_z, size=p))
        if s not in seen:
            seen.add(s)
            out.append(s)
    return np.array(out, dtype=np.int64)


def _draw_items(domains: DomainSpec, dom: np.ndarray, rng) -> np.ndarray:
    out = np.empty(dom.shape, dtype=np.int64)
    for k in range(domains.N_z):
        sel = dom == k
        n = int(sel.sum())
        if n:
            out[sel] = rng.choice(domains.members(k), size=n, p=domains.probs(k))
    return out


def gen_dataset(domains: DomainSpec, S_z, T: int, p: int, N: int, eta: float = 0.1,
                target_positive_rate: float = 0.5, rng=None):
    """Draw ``N`` samples.

    Returns ``(data, hidden, target_domain, clean_label)`` where ``hidden``
    is the ``(N, p)`` hidden-state sequence of each sample.
    """
    rng = np.random.default_rng(rng)
    S_z = np.asarray(S_z, dtype=np.int64)
    if S_z.ndim != 2 or S_z.shape[1] != p or len({tuple(s) for s in S_z}) != len(S_z):
        raise ValueError("hidden sequence set must hold distinct length-p sequences")
    if S_z.min() < 0 or S_z.max() >= domains.N_z:
        raise ValueError("hidden sequence refers to an unknown domain")
    member = np.zeros((len(S_z), domains.N_z), dtype=bool)
    member[np.arange(len(S_z))[:, None], S_z] = True
    if target_positive_rate < 1 and member.all():
        raise ValueError("every hidden sequence covers all domains; no negative target is possible")

    seq = rng.integers(len(S_z), size=N)
    hidden = S_z[seq]
    hist_dom = np.repeat(hidden, T, axis=1)
    hist = _draw_items(domains, hist_dom, rng)

    y = rng.random(N) < target_positive_rate
    allowed = member[seq]
    y |= allowed.all(axis=1)  # no negative domain left: resample until positive
    allowed = np.where(y[:, None], allowed, ~allowed)
    keys = np.where(allowed, rng.random((N, domains.N_z)), -1.0)
    z_t = keys.argmax(axis=1)
    target = _draw_items(domains, z_t, rng)
    flip = rng.random(N) < eta
    label = (y ^ flip).astype(np.float64)
    return CtrData(hist, target, label), hidden, z_t, y.astype(np.float64)


def generate(cfg: SynthConfig):
    """Train/test split plus ground truth for a config.

    Returns a dict with ``train``, ``test``, ``domains``, ``S_z`` and the
    per-sample ``hidden`` sequences of both splits.
    """
    rng = np.random.default_rng(cfg.seed)
    domains = DomainSpec.blocks(cfg.H, cfg.N_z, cfg.within_domain, cfg.zipf_s)
    S_z = make_sequence_set(cfg.N_z, cfg.p, cfg.N_S, rng)
    data, hidden, z_t, clean = gen_dataset(domains, S_z, cfg.T, cfg.p, cfg.N + cfg.n_test,
                                           cfg.eta, cfg.target_positive_rate, rng)
    tr, te = slice(0, cfg.N), slice(cfg.N, cfg.N + cfg.n_test)
    return {
        "train": data.subset(tr), "test": data.subset(te), "domains": domains, "S_z": S_z,
        "hidden_train": hidden[tr], "hidden_test": hidden[te],
        "target_domain_train": z_t[tr], "target_domain_test": z_t[te],
    }


def rule_scores(hidden, target_domain) -> np.ndarray:
    """Ground-truth rule: 1 when the target's domain is among the hidden states."""
    hidden = np.asarray(hidden)
    return (hidden == np.asarray(target_domain)[:, None]).any(axis=1).astype(np.float64)


def write_domains(path, domains: DomainSpec) -> None:
    with open(path, "w") as fh:
        json.dump({"assignment": domains.assignment.tolist()}, fh)
        fh.write("\n")


def read_domains(path) -> DomainSpec:
    with open(path) as fh:
        return DomainSpec(json.load(fh)["assignment"])


def write_hidden(path, hidden, target_domain) -> None:
    with open(path, "w") as fh:
        for h, z in zip(hidden, target_domain):
            fh.write(json.dumps({"hidden": [int(v) for v in h], "target_domain": int(z)}) + "\n")
