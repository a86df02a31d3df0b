"""Turn public rating/review logs into CTR samples.

Users are split deterministically: ``crc32(user) % 10 < 8`` goes to train.
Output ordering follows sorted user keys, so runs are byte-stable.
"""

from __future__ import annotations

import csv
import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CtrData
from .graph import write_sequences

logger = logging.getLogger(__name__)

MOVIELENS_HISTORY = 50
AMAZON_USER_KEYS = ("reviewerID", "user", "user_id")
AMAZON_ITEM_KEYS = ("asin", "item", "item_id")
AMAZON_TIME_KEYS = ("unixReviewTime", "timestamp", "time")


@dataclass
class RatingEvent:
    user: str
    item: str
    value: float
    timestamp: int


class ItemVocab:
    """Dense ids ``0..H-1`` for raw item keys, in order of first sight."""

    def __init__(self, keys=()):
        self.keys: list[str] = []
        self.index: dict[str, int] = {}
        for k in keys:
            self.add(k)

    def add(self, key: str) -> int:
        if key not in self.index:
            self.index[key] = len(self.keys)
            self.keys.append(key)
        return self.index[key]

    def __getitem__(self, key: str) -> int:
        return self.index[key]

    def __len__(self) -> int:
        return len(self.keys)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"items": self.keys}, fh)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "ItemVocab":
        with open(path) as fh:
            return cls(json.load(fh)["items"])


@dataclass
class IngestResult:
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    vocab: ItemVocab = field(default_factory=ItemVocab)
    sequences: list = field(default_factory=list)  # (user, [ids]) for training users only
    train_users: list = field(default_factory=list)
    test_users: list = field(default_factory=list)
    skipped: int = 0

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, rows in (("train", self.train), ("test", self.test)):
            with open(out / f"{name}.jsonl", "w") as fh:
                for h, t, y in rows:
                    fh.write(json.dumps({"history": h, "target": t, "label": y}) + "\n")
        self.vocab.write(out / "vocab.json")
        write_sequences(out / "sequences.jsonl", self.sequences)

    def data(self, split: str = "train") -> CtrData:
        return CtrData.from_samples(getattr(self, split))


def is_train_user(user: str) -> bool:
    return zlib.crc32(str(user).encode("utf-8")) % 10 < 8


def _user_key(u: str):
    return (0, int(u), "") if u.isdigit() else (1, 0, u)


def _group(events: list[RatingEvent], cap: int | None) -> list[tuple[str, list[RatingEvent]]]:
    by_user: dict[str, list] = {}
    for k, ev in enumerate(events):
        by_user.setdefault(ev.user, []).append((ev.timestamp, k, ev))
    users = sorted(by_user, key=_user_key)
    if cap is not None:
        users = users[:cap]
    return [(u, [ev for _, _, ev in sorted(by_user[u], key=lambda x: x[:2])]) for u in users]


def read_movielens(path) -> tuple[list[RatingEvent], int]:
    events, skipped = [], 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"userId", "movieId", "rating", "timestamp"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            try:
                ts = int(row["timestamp"])
                if ts < 0:
                    raise ValueError("negative timestamp")
                events.append(RatingEvent(str(row["userId"]).strip(), str(row["movieId"]).strip(),
                                          float(row["rating"]), ts))
            except (TypeError, ValueError, AttributeError):
                skipped += 1
    if skipped:
        logger.warning("%s: skipped %d malformed rows", path, skipped)
    return events, skipped


def ingest_movielens(path, n: int = MOVIELENS_HISTORY, cap: int | None = None) -> IngestResult:
    """One sample per rating whose ``n`` preceding ratings >= 3 exist; label is rating > 3."""
    if n < 1:
        raise ValueError("history length must be >= 1")
    events, skipped = read_movielens(path)
    res = IngestResult(skipped=skipped)
    for user, evs in _group(events, cap):
        ids = [res.vocab.add(ev.item) for ev in evs]
        train = is_train_user(user)
        (res.train_users if train else res.test_users).append(user)
        history: list[int] = []
        for ev, item in zip(evs, ids):
            if len(history) >= n:
                sample = (list(history[-n:]), item, int(ev.value > 3))
                (res.train if train else res.test).append(sample)
            if ev.value >= 3:
                history.append(item)
        if train and history:
            res.sequences.append((user, history))
    if not res.train and not res.test:
        raise ValueError(f"{path}: no samples produced (history length {n})")
    return res


def read_amazon(path) -> tuple[list[RatingEvent], int]:
    events, skipped = [], 0
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                user = next(rec[k] for k in AMAZON_USER_KEYS if k in rec)
                item = next(rec[k] for k in AMAZON_ITEM_KEYS if k in rec)
                ts = int(next(rec[k] for k in AMAZON_TIME_KEYS if k in rec))
                if ts < 0:
                    raise ValueError("negative timestamp")
                events.append(RatingEvent(str(user), str(item), float(rec.get("overall", 1.0)), ts))
            except (StopIteration, TypeError, ValueError, AttributeError):
                skipped += 1
    if skipped:
        logger.warning("%s: skipped %d malformed lines", path, skipped)
    return events, skipped


def ingest_amazon(path, cap: int | None = None, seed: int = 0) -> IngestResult:
    """Per user ``b_1..b_{n+1}``: positive ``(b_1..b_n -> b_{n+1})`` and one random negative."""
    events, skipped = read_amazon(path)
    res = IngestResult(skipped=skipped)
    grouped = _group(events, cap)
    per_user = [(u, [res.vocab.add(ev.item) for ev in evs]) for u, evs in grouped]
    rng = np.random.default_rng(seed)
    H = len(res.vocab)
    for user, ids in per_user:
        train = is_train_user(user)
        (res.train_users if train else res.test_users).append(user)
        if train:
            res.sequences.append((user, ids))
        if len(ids) < 2:
            continue
        hist, pos = ids[:-1], ids[-1]
        out = res.train if train else res.test
        out.append((hist, pos, 1))
        if H < 2:
            logger.warning("vocabulary too small for a negative target; user %s", user)
            continue
        neg = int(rng.integers(H - 1))
        neg += neg >= pos
        out.append((list(hist), neg, 0))
    return res


def sequences_for_graph(result: IngestResult) -> list[list[int]]:
    """Training users' time-ordered positive interactions (test users excluded)."""
    return [items for _, items in result.sequences]
