"""CTR network on top of residual embeddings, with row-sparse gradients."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import nets
from .data import CtrData
from .embedding import EmbedParams, att_backward, partition_matrix
from .graph import _clean, att_rows, fuse

FUSION_MODES = ("none", "oracle", "avg", "gcn", "att")
ATT_GRADS = ("stop", "full")


class ResEmbeddingModel:
    """Parameters plus the fixed fusion structure for one training run.

    ``fusion_mode`` selects how the central part is formed:

    * ``none``: plain lookup table, ``E = R``.
    * ``oracle``: ``E = P @ C + R`` with the one-hot item-to-domain ``P``.
    * ``avg`` / ``gcn``: ``E = g(Z) @ C_b + R`` with a constant ``g(Z)``.
    * ``att``: attention weights recomputed from the current ``C_b``.
    """

    def __init__(self, backend, fusion_mode, mlp: nets.MlpParams, embed: EmbedParams,
                 graph=None, assignment=None, att_grad="stop"):
        if fusion_mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion_mode {fusion_mode!r}; expected one of {FUSION_MODES}")
        if att_grad not in ATT_GRADS:
            raise ValueError(f"att_grad must be one of {ATT_GRADS}")
        if mlp.n_inputs != nets.n_inputs(backend, embed.d):
            raise ValueError(f"{backend} with d={embed.d} needs {nets.n_inputs(backend, embed.d)} "
                             f"network inputs, got {mlp.n_inputs}")
        self.backend = backend
        self.fusion_mode = fusion_mode
        self.att_grad = att_grad
        self.mlp = mlp
        self.embed = embed
        self.Z = None
        self.W = None
        H = embed.n_items
        if fusion_mode in ("avg", "gcn", "att"):
            if graph is None:
                raise ValueError(f"fusion_mode {fusion_mode!r} needs a graph")
            self.Z = _clean(graph)
            if self.Z.shape != (H, H) or embed.C_b.shape[0] != H:
                raise ValueError(f"graph {self.Z.shape} does not match {H} items / basis {embed.C_b.shape}")
            if fusion_mode != "att":
                self.W = fuse(self.Z, fusion_mode)
        elif fusion_mode == "oracle":
            if assignment is None:
                raise ValueError("oracle fusion needs an item-to-domain assignment")
            self.W = partition_matrix(assignment, embed.C_b.shape[0])
            if self.W.shape[0] != H:
                raise ValueError(f"assignment covers {self.W.shape[0]} items, expected {H}")

    # -------------------------------------------------------------- fusion

    def fusion_rows(self, rows):
        if self.fusion_mode == "none":
            return None
        if self.fusion_mode == "att":
            return att_rows(self.Z, self.embed.C_b, rows)
        return self.W[rows]

    def fusion_matrix(self):
        if self.fusion_mode == "att":
            return att_rows(self.Z, self.embed.C_b)
        return self.W

    def embedding_table(self) -> np.ndarray:
        W = self.fusion_matrix()
        if W is None:
            return self.embed.R.copy()
        return np.asarray(W @ self.embed.C_b) + self.embed.R

    def central_table(self) -> np.ndarray:
        W = self.fusion_matrix()
        if W is None:
            return np.zeros_like(self.embed.R)
        return np.asarray(W @ self.embed.C_b)

    # ------------------------------------------------------------ forward

    def logits(self, data: CtrData, batch_size: int = 4096) -> np.ndarray:
        E = self.embedding_table()
        out = np.empty(len(data))
        for s in range(0, len(data), batch_size):
            part = data.subset(slice(s, s + batch_size))
            mask = part.mask
            H = E[np.where(mask, part.hist, 0)] * mask[:, :, None]
            out[s:s + batch_size], _ = nets.model_forward(self.backend, self.mlp, H, mask, E[part.target])
        return out

    def mean_loss(self, data: CtrData) -> float:
        loss, _ = nets.cross_entropy_logit(self.logits(data), data.label)
        return float(loss.mean())

    # ----------------------------------------------------------- backward

    def loss_and_grads(self, batch: CtrData, lam: float = 0.0):
        """Mean cross-entropy of ``batch`` and gradients of ``CE + lam * ||R||^2``.

        Embedding gradients are row-sparse: ``grads["R"] = (rows, values)``
        covers the items present in the batch, ``grads["C_b"]`` the basis
        rows they draw on. The regularizer contributes ``2 lam R`` to the
        touched residual rows only.
        """
        mask = batch.mask
        hist = np.where(mask, batch.hist, 0)
        flat = np.concatenate([hist[mask], batch.target])
        U, inv = np.unique(flat, return_inverse=True)
        n_hist = int(mask.sum())
        hist_inv = np.zeros(hist.shape, dtype=np.int64)
        hist_inv[mask] = inv[:n_hist]
        tgt_inv = inv[n_hist:]

        W_U = self.fusion_rows(U)
        E_U = self.embed.R[U] if W_U is None else np.asarray(W_U @ self.embed.C_b) + self.embed.R[U]

        Hb = E_U[hist_inv] * mask[:, :, None]
        tb = E_U[tgt_inv]
        logit, cache = nets.model_forward(self.backend, self.mlp, Hb, mask, tb)
        loss, dlogit = nets.cross_entropy_logit(logit, batch.label)
        B = len(batch)
        gW, gb, dH, dt = nets.model_backward(self.mlp, cache, dlogit / B)

        cols = np.concatenate([hist_inv[mask], tgt_inv])
        vals = np.concatenate([dH[mask], dt])
        scatter = sp.csr_matrix((np.ones(cols.size), (cols, np.arange(cols.size))),
                                shape=(U.size, cols.size))
        G_E = np.asarray(scatter @ vals)

        grads = {"W": gW, "b": gb, "R": (U, G_E + 2.0 * lam * self.embed.R[U])}
        if W_U is not None:
            V = np.unique(W_U.indices)
            G_C = np.asarray(W_U.T @ G_E)
            if self.fusion_mode == "att" and self.att_grad == "full":
                G_C = G_C + att_backward(G_E, self.Z, W_U, self.embed.C_b, U)
                V = np.union1d(V, U)
            grads["C_b"] = (V, G_C[V])
        return float(loss.mean()), grads

    def dense_grads(self, batch: CtrData, lam: float = 0.0):
        """Full-size gradients of ``mean CE + lam * ||R||_F^2`` (for checking)."""
        loss, g = self.loss_and_grads(batch, lam)
        G_R = 2.0 * lam * self.embed.R
        rows, vals = g["R"]
        G_R[rows] = vals
        G_C = np.zeros_like(self.embed.C_b)
        if "C_b" in g:
            rows, vals = g["C_b"]
            G_C[rows] = vals
        return loss + lam * float(np.sum(self.embed.R ** 2)), {"W": g["W"], "b": g["b"], "R": G_R, "C_b": G_C}

    def objective(self, batch: CtrData, lam: float = 0.0, frozen_W=None) -> float:
        """Mean CE + ``lam * ||R||_F^2``; ``frozen_W`` fixes attention weights."""
        W = frozen_W if frozen_W is not None else self.fusion_matrix()
        E = self.embed.R if W is None else np.asarray(W @ self.embed.C_b) + self.embed.R
        mask = batch.mask
        H = E[np.where(mask, batch.hist, 0)] * mask[:, :, None]
        logit, _ = nets.model_forward(self.backend, self.mlp, H, mask, E[batch.target])
        loss, _ = nets.cross_entropy_logit(logit, batch.label)
        return float(loss.mean()) + lam * float(np.sum(self.embed.R ** 2))
