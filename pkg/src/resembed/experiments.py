"""Desk-scale experiment harnesses on synthetic interest-delay data."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
from sklearn.base import clone

from .estimator import ResEmbeddingClassifier
from .metrics import aggregation_stats, auc
from .synth import SynthConfig, generate

METHODS = ("none", "avg", "gcn", "att")
BASELINE_LAMBDA = 0.0  # plain lookup table carries no residual penalty


def method_estimator(mode: str, seed: int, n_items: int, **overrides) -> ResEmbeddingClassifier:
    """Estimator for one compared method with the desk-scale defaults (lr0 = 0.01, 5 epochs)."""
    params = dict(fusion_mode=mode, n_items=n_items, lr0=0.01, epochs=5, random_state=seed,
                  lam=BASELINE_LAMBDA if mode == "none" else 0.006)
    params.update(overrides)
    return ResEmbeddingClassifier(**params)


def run_method(bundle: dict, est: ResEmbeddingClassifier, train_idx=None) -> dict:
    """Fit ``est`` on the bundle's training split and summarize it on the test split."""
    train, test = bundle["train"], bundle["test"]
    if train_idx is not None:
        train = train.subset(train_idx)
    assignment = bundle["domains"].assignment
    est = clone(est)
    est.fit(train.X, train.label, assignment=assignment if est.fusion_mode == "oracle" else None,
            eval_set=(test.X, test.label))
    last = est.metrics_[-1] if est.metrics_ else {}
    model = est.model_
    stats = aggregation_stats(model.embedding_table(), assignment, model.embed.R, model.central_table())
    scores = est.decision_function(test.X)
    train_loss = last.get("train_loss", model.mean_loss(train))
    test_loss = last.get("test_loss", model.mean_loss(test))
    return {
        "method": est.fusion_mode, "seed": est.random_state, "n_train": len(train),
        "auc": auc(scores, test.label), "train_loss": train_loss, "test_loss": test_loss,
        "gap": test_loss - train_loss, "R_max": stats.R_max,
        "intra_inter_ratio": stats.intra_inter_ratio,
        "res_scale_ratio": stats.residual_scale_ratio, "metrics": est.metrics_,
    }


def synthetic_end_to_end(seeds=(1, 2, 3, 4, 5), methods=METHODS, synth: SynthConfig | None = None,
                         **overrides) -> list[dict]:
    """Every method on every seed; each seed gets its own generated dataset."""
    synth = synth or SynthConfig()
    rows = []
    for seed in seeds:
        bundle = generate(replace(synth, seed=seed))
        for mode in methods:
            rows.append(run_method(bundle, method_estimator(mode, seed, synth.H, **overrides)))
    return rows


def median_by_method(rows, key: str) -> dict:
    out = {}
    for r in rows:
        out.setdefault(r["method"], []).append(r[key])
    return {m: float(np.median(v)) for m, v in out.items()}


def overfit_gap_experiment(bundle: dict, baseline: ResEmbeddingClassifier,
                           res: ResEmbeddingClassifier, every: int = 100):
    """Loss curves sampled every ``every`` steps for a baseline and a res-embedding run.

    Returns ``(curve_rows, final_gaps)``; curve rows are
    ``(method, step, train_loss, test_loss)``.
    """
    curves, gaps = [], {}
    for name, est in (("baseline", baseline), ("res", res)):
        out = run_method(bundle, clone(est).set_params(eval_every=every))
        pts = [m for m in out["metrics"] if m["step"] % every == 0 or m is out["metrics"][-1]]
        seen = set()
        for m in pts:
            if m["step"] in seen:
                continue
            seen.add(m["step"])
            curves.append((name, m["step"], m["train_loss"], m["test_loss"]))
        gaps[name] = out["gap"] if out["metrics"] else float("nan")
    return curves, gaps


def decay_experiment(bundle: dict, fractions, methods=("none", "att"), seed: int = 1,
                     **overrides) -> list[tuple]:
    """AUC after training on the first ``ceil(f * N)`` samples of one fixed shuffle.

    Returns ``(fraction, method, auc)`` rows.
    """
    n = len(bundle["train"])
    order = np.random.default_rng([seed, 7]).permutation(n)
    rows = []
    for f in fractions:
        if not 0 < f <= 1:
            raise ValueError(f"fraction {f} outside (0, 1]")
        k = math.ceil(f * n)
        if k == 0:
            raise ValueError(f"fraction {f} selects no samples")
        idx = np.sort(order[:k]) if k < n else np.arange(n)
        for mode in methods:
            out = run_method(bundle, method_estimator(mode, seed, bundle["domains"].H, **overrides), idx)
            rows.append((float(f), mode, out["auc"]))
    return rows


def residual_scale_sweep(bundle: dict, lambdas, mode: str = "att", seed: int = 1,
                         **overrides) -> list[tuple]:
    """``(lambda, res_scale_ratio, auc)`` per penalty, plus ``("inf", 0, auc)`` with ``R`` pinned at 0."""
    rows = []
    H = bundle["domains"].H
    for lam in lambdas:
        if lam < 0:
            raise ValueError("lambda must be >= 0")
        out = run_method(bundle, method_estimator(mode, seed, H, lam=lam, **overrides))
        rows.append((float(lam), out["res_scale_ratio"], out["auc"]))
    out = run_method(bundle, method_estimator(mode, seed, H, freeze_residual=True, **overrides))
    rows.append(("inf", out["res_scale_ratio"], out["auc"]))
    return rows


def write_csv(path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)
