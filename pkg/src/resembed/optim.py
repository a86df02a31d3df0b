"""Adam with stepwise exponential decay, and the minibatch training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nets
from .data import CtrData
from .embedding import DEFAULT_DIM, EmbedParams
from .metrics import auc, residual_scale_ratio
from .model import ATT_GRADS, FUSION_MODES, ResEmbeddingModel

logger = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "step", "train_loss", "test_loss", "test_auc", "lr", "res_scale_ratio")


@dataclass
class TrainConfig:
    lr0: float = 0.1
    decay_gamma: float = 0.9
    decay_interval: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    lam: float = 0.006
    epochs: int = 5
    seed: int = 0
    fusion_mode: str = "none"
    backend: str = "mlp"
    d: int = DEFAULT_DIM
    hidden: tuple = (400, 120)
    att_grad: str = "stop"
    freeze_residual: bool = False
    eval_every: int = 0  # steps between curve points; 0 = epoch ends only

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        checks = {
            "lr0": self.lr0 > 0,
            "beta1": 0 <= self.beta1 < 1,
            "beta2": 0 <= self.beta2 < 1,
            "eps": self.eps > 0,
            "batch_size": self.batch_size >= 1,
            "lambda": self.lam >= 0,
            "epochs": self.epochs >= 0,
            "decay_gamma": 0 < self.decay_gamma <= 1,
            "decay_interval": self.decay_interval >= 1,
            "d": self.d >= 1,
            "eval_every": self.eval_every >= 0,
            "fusion_mode": self.fusion_mode in FUSION_MODES,
            "backend": self.backend in nets.BACKENDS,
            "att_grad": self.att_grad in ATT_GRADS,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"invalid training config field(s): {', '.join(bad)}")

    def as_dict(self) -> dict:
        return asdict(self)


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    return cfg.lr0 * cfg.decay_gamma ** (step // cfg.decay_interval)


class Adam:
    """Adam with lazy row updates for embedding tables.

    Dense tensors get the usual update. For a row-sparse gradient
    ``(rows, values)`` only those rows' moments and values change; bias
    correction uses the global step count.
    """

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def _update(self, name, param, grad, rows, lr):
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite gradient in {name!r} at step {self.t}")
        if name not in self.m:
            self.m[name] = np.zeros_like(param)
            self.v[name] = np.zeros_like(param)
        m, v = self.m[name], self.v[name]
        sel = slice(None) if rows is None else rows
        m_new = self.beta1 * m[sel] + (1 - self.beta1) * grad
        v_new = self.beta2 * v[sel] + (1 - self.beta2) * grad * grad
        m[sel] = m_new
        v[sel] = v_new
        m_hat = m_new / (1 - self.beta1 ** self.t)
        v_hat = v_new / (1 - self.beta2 ** self.t)
        param[sel] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def step(self, params: dict, grads: dict, lr: float) -> None:
        """``grads[name]`` is an array or a ``(rows, values)`` pair; params update in place."""
        self.t += 1
        for name, g in grads.items():
            if isinstance(g, tuple):
                self._update(name, params[name], np.asarray(g[1]), np.asarray(g[0]), lr)
            else:
                self._update(name, params[name], np.asarray(g), None, lr)


def adam_step(params: dict, grads: dict, state: Adam, lr: float) -> Adam:
    state.step(params, grads, lr)
    return state


def _param_views(model: ResEmbeddingModel) -> dict:
    views = {"R": model.embed.R, "C_b": model.embed.C_b}
    for k, (w, b) in enumerate(zip(model.mlp.weights, model.mlp.biases)):
        views[f"W{k}"] = w
        views[f"b{k}"] = b
    return views


def _flat_grads(grads: dict, freeze_residual: bool) -> dict:
    out = {}
    for k, (gw, gb) in enumerate(zip(grads["W"], grads["b"])):
        out[f"W{k}"] = gw
        out[f"b{k}"] = gb
    if not freeze_residual:
        out["R"] = grads["R"]
    if "C_b" in grads:
        out["C_b"] = grads["C_b"]
    return out


def init_model(cfg: TrainConfig, n_items: int, graph=None, assignment=None,
               n_domains: int | None = None) -> ResEmbeddingModel:
    rng = np.random.default_rng(cfg.seed)
    if cfg.fusion_mode == "oracle":
        if assignment is None:
            raise ValueError("oracle fusion needs an assignment")
        n_basis = n_domains if n_domains is not None else int(np.max(assignment)) + 1
    elif cfg.fusion_mode == "none":
        n_basis = 0
    else:
        n_basis = n_items
    embed = EmbedParams.init(n_items, cfg.d, n_basis, rng)
    if cfg.freeze_residual:
        embed.R[:] = 0.0
    mlp = nets.MlpParams.init(nets.n_inputs(cfg.backend, cfg.d), cfg.hidden, rng)
    return ResEmbeddingModel(cfg.backend, cfg.fusion_mode, mlp, embed, graph, assignment, cfg.att_grad)


@dataclass
class TrainResult:
    model: ResEmbeddingModel
    metrics: list = field(default_factory=list)
    steps: int = 0


def _evaluate(model, train, test, epoch, step, lr):
    row = {"epoch": epoch, "step": step, "train_loss": model.mean_loss(train), "lr": lr}
    if test is not None and len(test):
        logits = model.logits(test)
        loss, _ = nets.cross_entropy_logit(logits, test.label)
        row["test_loss"] = float(loss.mean())
        try:
            row["test_auc"] = auc(logits, test.label)
        except ValueError:
            row["test_auc"] = float("nan")
    else:
        row["test_loss"] = row["test_auc"] = float("nan")
    row["res_scale_ratio"] = residual_scale_ratio(model.embed.R, model.central_table())
    return row


def train(train_data: CtrData, cfg: TrainConfig, n_items: int, graph=None, assignment=None,
          test_data: CtrData | None = None, n_domains: int | None = None,
          model: ResEmbeddingModel | None = None) -> TrainResult:
    """Shuffled minibatch Adam on ``mean CE + lam * ||R||^2``.

    Returns the trained model and metric rows (one per epoch end, plus one
    every ``cfg.eval_every`` steps when set).
    """
    if len(train_data) == 0:
        raise ValueError("training set is empty")
    train_data.validate(n_items)
    if test_data is not None:
        test_data.validate(n_items)
    if model is None:
        model = init_model(cfg, n_items, graph, assignment, n_domains)
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(cfg.beta1, cfg.beta2, cfg.eps)
    views = _param_views(model)
    result = TrainResult(model)
    step = 0
    n = len(train_data)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = train_data.subset(order[start:start + cfg.batch_size])
            lr = lr_schedule(step, cfg)
            loss, grads = model.loss_and_grads(batch, 0.0 if cfg.freeze_residual else cfg.lam)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at step {step}")
            opt.step(views, _flat_grads(grads, cfg.freeze_residual), lr)
            step += 1
            if cfg.eval_every and step % cfg.eval_every == 0:
                result.metrics.append(_evaluate(model, train_data, test_data, epoch, step, lr))
        row = _evaluate(model, train_data, test_data, epoch, step, lr_schedule(step, cfg))
        result.metrics.append(row)
        logger.info("epoch %d step %d train %.4f test %.4f auc %.4f", epoch, step,
                    row["train_loss"], row["test_loss"], row["test_auc"])
    result.steps = step
    return result


def write_metrics(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(METRIC_FIELDS) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r.get(k, float("nan"))) for k in METRIC_FIELDS) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)
