"""scikit-learn style classifier around the residual-embedding CTR model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import CtrData
from .graph import DEFAULT_DELTA, DEFAULT_K, interest_graph
from .nets import sigmoid
from .optim import TrainConfig, train


class ResEmbeddingClassifier(ClassifierMixin, BaseEstimator):
    """CTR classifier whose item embeddings are ``g(Z) @ C_b + R``.

    ``X`` is an integer matrix: all columns but the last hold the click
    history (``-1`` pads short histories), the last column holds the target
    item. ``y`` holds 0/1 click labels.

    Parameters
    ----------
    fusion_mode : {"none", "oracle", "avg", "gcn", "att"}
        ``none`` trains a plain lookup table; ``oracle`` needs
        ``assignment`` at fit time; the graph modes build the interest graph
        from the training histories unless ``graph`` or ``sequences`` is
        passed to :meth:`fit`.
    backend : {"mlp", "pnn", "din"}
    n_items : int or None
        Vocabulary size; inferred from ``X`` when None.
    lam : float
        Weight of the squared Frobenius penalty on the residual table.
    random_state : int
        Seeds initialization and minibatch order.
    """

    def __init__(self, fusion_mode="avg", backend="mlp", n_items=None, d=18, hidden=(400, 120),
                 lam=0.006, lr0=0.1, decay_gamma=0.9, decay_interval=1000, batch_size=128,
                 epochs=5, delta=DEFAULT_DELTA, K=DEFAULT_K, att_grad="stop",
                 freeze_residual=False, eval_every=0, random_state=0):
        self.fusion_mode = fusion_mode
        self.backend = backend
        self.n_items = n_items
        self.d = d
        self.hidden = hidden
        self.lam = lam
        self.lr0 = lr0
        self.decay_gamma = decay_gamma
        self.decay_interval = decay_interval
        self.batch_size = batch_size
        self.epochs = epochs
        self.delta = delta
        self.K = K
        self.att_grad = att_grad
        self.freeze_residual = freeze_residual
        self.eval_every = eval_every
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr0=self.lr0, decay_gamma=self.decay_gamma,
                           decay_interval=self.decay_interval, batch_size=self.batch_size,
                           lam=self.lam, epochs=self.epochs, seed=self.random_state,
                           fusion_mode=self.fusion_mode, backend=self.backend, d=self.d,
                           hidden=self.hidden, att_grad=self.att_grad,
                           freeze_residual=self.freeze_residual, eval_every=self.eval_every)

    def _data(self, X, y=None) -> CtrData:
        data = CtrData.from_X(X, y)
        data.validate(self.n_items_)
        return data

    def fit(self, X, y, graph=None, sequences=None, assignment=None, eval_set=None):
        """Train on ``(X, y)``.

        ``eval_set=(X_test, y_test)`` adds test loss/AUC to ``metrics_``.
        """
        cfg = self.train_config()
        data = CtrData.from_X(X, y)
        if self.n_items is not None:
            self.n_items_ = int(self.n_items)
        else:
            ids = np.concatenate([data.hist[data.mask], data.target])
            if eval_set is not None:
                ids = np.concatenate([ids, np.asarray(eval_set[0]).ravel()])
            self.n_items_ = int(ids.max()) + 1
        data.validate(self.n_items_)
        test = self._data(*eval_set) if eval_set is not None else None
        if self.fusion_mode in ("avg", "gcn", "att") and graph is None:
            seqs = sequences if sequences is not None else [h[h >= 0] for h in data.hist]
            graph = interest_graph(seqs, self.n_items_, self.delta, self.K)
        self.graph_ = graph
        self.classes_ = np.array([0, 1])
        result = train(data, cfg, self.n_items_, graph=graph, assignment=assignment, test_data=test)
        self.model_ = result.model
        self.metrics_ = result.metrics
        self.n_steps_ = result.steps
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.logits(self._data(X))

    def predict_proba(self, X):
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int64)

    @property
    def embeddings_(self) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.embedding_table()
