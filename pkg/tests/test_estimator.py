import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from resembed.estimator import ResEmbeddingClassifier
from resembed.synth import SynthConfig, generate


@pytest.fixture(scope="module")
def bundle():
    return generate(SynthConfig(H=80, N=600, n_test=200, seed=5))


def small(**kw):
    params = dict(d=4, hidden=(8,), epochs=1, lr0=0.01, batch_size=64, n_items=80)
    params.update(kw)
    return ResEmbeddingClassifier(**params)


def test_params_round_trip():
    est = small(fusion_mode="gcn", lam=0.01)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin.set_params(K=4).K == 4


@pytest.mark.parametrize("mode", ["none", "oracle", "avg", "gcn", "att"])
def test_fit_predict_shapes(bundle, mode):
    tr, te = bundle["train"], bundle["test"]
    est = small(fusion_mode=mode, backend="din")
    est.fit(tr.X, tr.label, assignment=bundle["domains"].assignment if mode == "oracle" else None,
            eval_set=(te.X, te.label))
    proba = est.predict_proba(te.X)
    assert proba.shape == (len(te), 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1)
    assert set(np.unique(est.predict(te.X))) <= {0, 1}
    assert est.embeddings_.shape == (80, 4)
    assert 0 <= est.score(te.X, te.label) <= 1
    assert est.metrics_[-1]["test_auc"] == est.metrics_[-1]["test_auc"]


def test_unfitted_and_bad_input(bundle):
    with pytest.raises(NotFittedError):
        small().predict(bundle["test"].X)
    est = small(fusion_mode="none").fit(bundle["train"].X, bundle["train"].label)
    bad = bundle["test"].X.copy()
    bad[0, -1] = 500
    with pytest.raises(ValueError):
        est.predict(bad)


def test_invalid_hyperparameter_named(bundle):
    with pytest.raises(ValueError, match="lambda"):
        small(lam=-1.0).fit(bundle["train"].X, bundle["train"].label)
