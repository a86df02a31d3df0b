"""Sample containers and the samples JSON Lines format.

A dataset is stored as a padded id matrix: ``X[:, :-1]`` holds the click
history (``-1`` marks padding) and ``X[:, -1]`` the target item. This is the
``X`` accepted by :class:`resembed.estimator.ResEmbeddingClassifier`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

PAD = -1


@dataclass
class CtrData:
    hist: np.ndarray  # (N, L) int64, PAD where empty
    target: np.ndarray  # (N,) int64
    label: np.ndarray  # (N,) float64 in {0, 1}

    def __len__(self) -> int:
        return self.target.shape[0]

    @property
    def mask(self) -> np.ndarray:
        return self.hist != PAD

    def subset(self, idx) -> "CtrData":
        return CtrData(self.hist[idx], self.target[idx], self.label[idx])

    @property
    def X(self) -> np.ndarray:
        return np.column_stack([self.hist, self.target])

    @classmethod
    def from_X(cls, X, y=None) -> "CtrData":
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] < 2:
            raise ValueError("X must be 2-D with at least one history column and the target")
        if not np.issubdtype(X.dtype, np.integer):
            if not np.all(np.isfinite(X)) or np.any(X != np.round(X)):
                raise ValueError("X must hold integer item ids")
        X = X.astype(np.int64)
        label = np.zeros(X.shape[0]) if y is None else np.asarray(y, dtype=np.float64).ravel()
        if label.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {label.shape[0]}")
        return cls(X[:, :-1], X[:, -1], label)

    @classmethod
    def from_samples(cls, samples) -> "CtrData":
        """From dicts/tuples ``(history, target, label)``; histories may differ in length."""
        rows = [(s["history"], s["target"], s["label"]) if isinstance(s, dict) else s for s in samples]
        L = max((len(h) for h, _, _ in rows), default=1)
        hist = np.full((len(rows), L), PAD, dtype=np.int64)
        for i, (h, _, _) in enumerate(rows):
            hist[i, :len(h)] = h
        target = np.array([t for _, t, _ in rows], dtype=np.int64)
        label = np.array([y for _, _, y in rows], dtype=np.float64)
        return cls(hist, target, label)

    def samples(self):
        for h, t, y in zip(self.hist, self.target, self.label):
            yield {"history": [int(i) for i in h if i != PAD], "target": int(t), "label": int(y)}

    def validate(self, n_items: int) -> None:
        ids = np.concatenate([self.hist[self.mask], self.target])
        if ids.size and (ids.min() < 0 or ids.max() >= n_items):
            raise ValueError(f"item id outside [0, {n_items})")
        if not self.mask.any(axis=1).all():
            raise ValueError("every sample needs a non-empty history")
        if not np.isin(self.label, (0.0, 1.0)).all():
            raise ValueError("labels must be 0 or 1")


def write_samples(path, data: CtrData) -> None:
    with open(path, "w") as fh:
        for rec in data.samples():
            fh.write(json.dumps(rec) + "\n")


def read_samples(path) -> CtrData:
    with open(path) as fh:
        return CtrData.from_samples([json.loads(line) for line in fh if line.strip()])
