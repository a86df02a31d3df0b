"""Central finite-difference checks of the end-to-end analytic gradients."""

from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp

from . import nets
from .data import PAD, CtrData
from .embedding import EmbedParams
from .graph import symmetrize
from .model import ResEmbeddingModel

CASES_FUSION = ("none", "oracle", "avg", "gcn", "att")


def toy_problem(backend="mlp", fusion_mode="avg", seed=0, H=10, d=3, hidden=(5, 4), n=6, L=4,
                n_domains=3, att_grad="stop", scale=0.5):
    """Small random model plus batch, sized for exhaustive finite differences."""
    rng = np.random.default_rng(seed)
    Z = sp.random(H, H, density=0.35, random_state=rng, data_rvs=lambda k: rng.integers(1, 5, k))
    Z = symmetrize(Z)
    assignment = np.arange(H) % n_domains
    n_basis = {"oracle": n_domains, "none": 0}.get(fusion_mode, H)
    embed = EmbedParams.init(H, d, n_basis, rng, scale=scale)
    mlp = nets.MlpParams.init(nets.n_inputs(backend, d), hidden, rng)
    for b in mlp.biases:
        b[:] = rng.uniform(-0.1, 0.1, size=b.shape)
    model = ResEmbeddingModel(backend, fusion_mode, mlp, embed, graph=Z,
                              assignment=assignment, att_grad=att_grad)
    hist = rng.integers(H, size=(n, L))
    lengths = rng.integers(1, L + 1, size=n)
    hist[np.arange(L)[None, :] >= lengths[:, None]] = PAD
    batch = CtrData(hist, rng.integers(H, size=n), rng.integers(0, 2, size=n).astype(float))
    return model, batch


def _relu_pattern(model, batch, frozen_W):
    W = frozen_W if frozen_W is not None else model.fusion_matrix()
    E = model.embed.R if W is None else np.asarray(W @ model.embed.C_b) + model.embed.R
    mask = batch.mask
    H = E[np.where(mask, batch.hist, 0)] * mask[:, :, None]
    _, cache = nets.model_forward(model.backend, model.mlp, H, mask, E[batch.target])
    pre = cache[-1][1][:-1]
    return np.concatenate([(z > 0).ravel() for z in pre]) if pre else np.empty(0, bool)


def check_model(model: ResEmbeddingModel, batch: CtrData, lam: float = 0.0, h: float = 1e-5,
                floor: float = 1e-6) -> dict:
    """Max relative error per parameter tensor, plus how many coordinates were skipped.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    Coordinates whose perturbation flips a ReLU gate are skipped.
    """
    _, grads = model.dense_grads(batch, lam)
    frozen = None
    if model.fusion_mode == "att" and model.att_grad == "stop":
        frozen = model.fusion_matrix()
    base_pattern = _relu_pattern(model, batch, frozen)
    tensors = {"R": (model.embed.R, grads["R"]), "C_b": (model.embed.C_b, grads["C_b"])}
    for k, (w, b) in enumerate(zip(model.mlp.weights, model.mlp.biases)):
        tensors[f"W{k}"] = (w, grads["W"][k])
        tensors[f"b{k}"] = (b, grads["b"][k])
    out = {"max_rel_err": 0.0, "skipped": 0, "checked": 0, "per_tensor": {}}
    for name, (param, analytic) in tensors.items():
        worst = 0.0
        for idx in itertools.product(*map(range, param.shape)):
            orig = param[idx]
            param[idx] = orig + h
            fp, pat_p = model.objective(batch, lam, frozen), _relu_pattern(model, batch, frozen)
            param[idx] = orig - h
            fm, pat_m = model.objective(batch, lam, frozen), _relu_pattern(model, batch, frozen)
            param[idx] = orig
            if not (np.array_equal(pat_p, base_pattern) and np.array_equal(pat_m, base_pattern)):
                out["skipped"] += 1
                continue
            num = (fp - fm) / (2 * h)
            a = analytic[idx]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
            out["checked"] += 1
        out["per_tensor"][name] = worst
        out["max_rel_err"] = max(out["max_rel_err"], worst)
    return out


def run_all(lams=(0.0, 0.006), backends=nets.BACKENDS, fusions=CASES_FUSION, seed=0,
            include_att_full=True) -> list[dict]:
    rows = []
    variants = [(f, "stop") for f in fusions]
    if include_att_full and "att" in fusions:
        variants.append(("att", "full"))
    for backend, (fusion, att_grad), lam in itertools.product(backends, variants, lams):
        model, batch = toy_problem(backend, fusion, seed=seed, att_grad=att_grad)
        res = check_model(model, batch, lam)
        rows.append({"backend": backend, "fusion": fusion if fusion != "att" else f"att-{att_grad}",
                     "lambda": lam, **{k: res[k] for k in ("max_rel_err", "checked", "skipped")}})
    return rows
