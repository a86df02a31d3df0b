import csv

import numpy as np
import pytest

from resembed.experiments import (decay_experiment, method_estimator, overfit_gap_experiment,
                                  residual_scale_sweep, run_method, write_csv)
from resembed.synth import SynthConfig, generate

FAST = dict(d=4, hidden=(8,), epochs=1, batch_size=128)


@pytest.fixture(scope="module")
def bundle():
    return generate(SynthConfig(H=100, N=800, n_test=300, seed=11))


def test_identical_configs_identical_curves(bundle):
    base = method_estimator("none", 1, 100, **FAST)
    res = method_estimator("avg", 1, 100, **FAST)
    a = overfit_gap_experiment(bundle, base, res, every=2)
    b = overfit_gap_experiment(bundle, base, res, every=2)
    assert a == b and len(a[0]) > 2
    assert {m for m, *_ in a[0]} == {"baseline", "res"}


def test_zero_epochs_zero_length_curves(bundle):
    base = method_estimator("none", 1, 100, **{**FAST, "epochs": 0})
    curves, gaps = overfit_gap_experiment(bundle, base, base.set_params(fusion_mode="avg"))
    assert curves == [] and all(np.isnan(g) for g in gaps.values())


def test_decay_full_fraction_matches_standard_run(bundle, tmp_path):
    rows = decay_experiment(bundle, [0.5, 1.0], methods=("none", "gcn"), seed=2, **FAST)
    assert len(rows) == 4 and all(0 <= a <= 1 for *_, a in rows)
    full = run_method(bundle, method_estimator("gcn", 2, 100, **FAST))
    assert rows[-1] == (1.0, "gcn", full["auc"])
    write_csv(tmp_path / "d.csv", ["fraction", "method", "auc"], rows)
    parsed = list(csv.DictReader(open(tmp_path / "d.csv")))
    assert [r["method"] for r in parsed] == ["none", "gcn", "none", "gcn"]
    with pytest.raises(ValueError):
        decay_experiment(bundle, [0.0], **FAST)


def test_residual_sweep_rows(bundle):
    rows = residual_scale_sweep(bundle, [0.0, 0.1], mode="avg", seed=1, **FAST)
    assert [r[0] for r in rows] == [0.0, 0.1, "inf"]
    assert rows[-1][1] == 0
    assert rows[0][1] > rows[1][1]


@pytest.mark.slow
def test_residual_scale_direction_on_defaults():
    rows = residual_scale_sweep(generate(SynthConfig(seed=1)), [0.0, 0.006, 0.05], mode="att", seed=1)
    swept, frozen = rows[:-1], rows[-1]
    assert frozen[1] == 0
    assert max(swept, key=lambda r: r[1])[0] == 0.0
    assert max(r[2] for r in swept) > frozen[2]
