"""Small CTR back-ends with hand-written reverse mode.

All batch functions take history embeddings ``H`` of shape ``(B, L, d)``
with a boolean ``mask`` of shape ``(B, L)`` marking real positions, and
target embeddings ``t`` of shape ``(B, d)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

BACKENDS = ("mlp", "pnn", "din")
HIDDEN = (400, 120)


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class MlpParams:
    """Weights ``W_t`` of shape ``(out, in)`` and biases ``b_t``; last layer has one output."""

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {k}: weight {w.shape} vs bias {b.shape}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k} input {w.shape[1]} != previous output "
                                 f"{self.weights[k - 1].shape[0]}")
        if self.weights[-1].shape[0] != 1:
            raise ValueError("final layer must have a single output")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def init(cls, n_inputs: int, hidden=HIDDEN, rng=None):
        rng = np.random.default_rng(rng)
        sizes = [n_inputs, *hidden, 1]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def tensors(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_json(self) -> dict:
        return {"layers": [{"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
                           for w, b in zip(self.weights, self.biases)]}

    @classmethod
    def from_json(cls, obj: dict) -> "MlpParams":
        ws = [np.asarray(layer["weight"], dtype=np.float64).reshape(layer["shape"]) for layer in obj["layers"]]
        return cls(ws, [layer["bias"] for layer in obj["layers"]])


def mean_spectral_norm(params: MlpParams) -> float:
    """Average largest singular value over all layer matrices, final layer included."""
    return float(np.mean([np.linalg.norm(w, 2) for w in params.weights]))


def mlp_forward(params: MlpParams, x):
    """Return the logit(s) and the activation cache.

    ``x`` may be one input vector or a ``(B, n_inputs)`` batch.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != params.n_inputs:
        raise ValueError(f"input has {h.shape[1]} features, network expects {params.n_inputs}")
    acts = [h]
    pre = []
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        pre.append(z)
        if k < params.depth - 1:
            h = relu(z)
            acts.append(h)
    logit = pre[-1][:, 0]
    cache = (acts, pre)
    return (logit[0] if single else logit), cache


def mlp_predict(params: MlpParams, x):
    logit, _ = mlp_forward(params, x)
    return sigmoid(logit)


def mlp_backward(params: MlpParams, cache, dlogit):
    """Gradients for every weight and bias plus the input, given ``dloss/dlogit``.

    ReLU's derivative at exactly zero is taken as zero.
    """
    acts, pre = cache
    g = np.asarray(dlogit, dtype=np.float64).reshape(-1, 1)
    gW = [None] * params.depth
    gb = [None] * params.depth
    for k in range(params.depth - 1, -1, -1):
        if k < params.depth - 1:
            g = g * (pre[k] > 0)
        gW[k] = g.T @ acts[k]
        gb[k] = g.sum(axis=0)
        g = g @ params.weights[k]
    return gW, gb, g


def cross_entropy_logit(logit, y):
    """Per-sample binary cross-entropy and its derivative w.r.t. the logit."""
    logit = np.asarray(logit, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    loss = np.logaddexp(0.0, logit) - y * logit
    return loss, sigmoid(logit) - y


def cross_entropy(p, y):
    """``-y ln p - (1-y) ln(1-p)`` evaluated through the logit of ``p``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("probability must lie strictly inside (0, 1)")
    return cross_entropy_logit(np.log(p) - np.log1p(-p), y)


def abs_loss(p, y):
    return np.abs(np.asarray(p, dtype=np.float64) - np.asarray(y, dtype=np.float64))


# ------------------------------------------------------------------ pooling

def sum_pool(history):
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[0] == 0:
        raise ValueError("history must be a non-empty (n, d) array")
    return history.sum(axis=0)


def pnn_features(pooled, target):
    pooled = np.asarray(pooled, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pooled.shape != target.shape:
        raise ValueError(f"pooled {pooled.shape} vs target {target.shape}")
    return np.concatenate([pooled, target, pooled * target], axis=-1)


def _masked_softmax(scores, mask):
    s = np.where(mask, scores, -np.inf)
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s) * mask
    return e / e.sum(axis=1, keepdims=True)


def din_pool(history, target):
    """Attention pooling with scores ``e_j . target / sqrt(d)``."""
    history = np.asarray(history, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if history.ndim != 2 or history.shape[0] == 0:
        raise ValueError("history must be a non-empty (n, d) array")
    pooled, _ = din_pool_batch(history[None], np.ones((1, history.shape[0]), bool), target[None])
    return pooled[0]


def din_pool_batch(H, mask, t):
    d = H.shape[2]
    scores = np.einsum("bld,bd->bl", H, t) / np.sqrt(d)
    a = _masked_softmax(scores, mask)
    return np.einsum("bl,bld->bd", a, H), a


# -------------------------------------------------------------- full model

def n_inputs(backend: str, d: int) -> int:
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    return 3 * d if backend == "pnn" else 2 * d


def model_forward(backend: str, mlp: MlpParams, H, mask, t):
    """Logits for a batch, plus the cache needed by :func:`model_backward`."""
    if not mask.any(axis=1).all():
        raise ValueError("every sample needs a non-empty history")
    if backend == "din":
        pooled, a = din_pool_batch(H, mask, t)
    else:
        pooled, a = np.einsum("bl,bld->bd", mask.astype(np.float64), H), None
    if backend == "pnn":
        x = np.concatenate([pooled, t, pooled * t], axis=1)
    else:
        x = np.concatenate([pooled, t], axis=1)
    logit, mcache = mlp_forward(mlp, x)
    return logit, (backend, H, mask, t, pooled, a, mcache)


def model_backward(mlp: MlpParams, cache, dlogit):
    """Returns ``(grad_weights, grad_biases, dH, dt)``."""
    backend, H, mask, t, pooled, a, mcache = cache
    gW, gb, dx = mlp_backward(mlp, mcache, dlogit)
    d = t.shape[1]
    dpooled = dx[:, :d]
    dt = dx[:, d:2 * d].copy()
    if backend == "pnn":
        dprod = dx[:, 2 * d:]
        dpooled = dpooled + dprod * t
        dt += dprod * pooled
    if backend == "din":
        dH = a[:, :, None] * dpooled[:, None, :]
        da = np.einsum("bld,bd->bl", H, dpooled)
        ds = a * (da - (a * da).sum(axis=1, keepdims=True)) / np.sqrt(d)
        dH += ds[:, :, None] * t[:, None, :]
        dt += np.einsum("bl,bld->bd", ds, H)
    else:
        dH = np.broadcast_to(dpooled[:, None, :], H.shape) * mask[:, :, None]
    return gW, gb, dH, dt


def save_checkpoint(path, mlp: MlpParams, embed=None, extra: dict | None = None) -> None:
    obj = {"mlp": mlp.to_json()}
    if embed is not None:
        obj["embedding"] = {name: {"shape": list(arr.shape), "values": arr.ravel().tolist()}
                            for name, arr in (("C_b", embed.C_b), ("R", embed.R))}
    if extra:
        obj.update(extra)
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_checkpoint(path):
    from .embedding import EmbedParams

    with open(path) as fh:
        obj = json.load(fh)
    mlp = MlpParams.from_json(obj["mlp"])
    embed = None
    if "embedding" in obj:
        e = obj["embedding"]
        embed = EmbedParams(*(np.asarray(e[k]["values"], dtype=np.float64).reshape(e[k]["shape"])
                              for k in ("C_b", "R")))
    return mlp, embed, obj
