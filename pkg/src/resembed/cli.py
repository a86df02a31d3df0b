"""Command line entry point: ``resembed <command> [--config run.json] [--flag value ...]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

logger = logging.getLogger("resembed")

COMMANDS = ("synth", "ingest-movielens", "ingest-amazon", "build-graph", "train", "eval",
            "export-emb", "verify-prop1", "bound", "gradcheck")


class ConfigError(Exception):
    """Bad or missing configuration; maps to exit code 2."""


@dataclasses.dataclass
class RunConfig:
    # training
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
    fusion_mode: str = "avg"
    backend: str = "mlp"
    d: int = 18
    hidden: list = dataclasses.field(default_factory=lambda: [400, 120])
    att_grad: str = "stop"
    freeze_residual: bool = False
    eval_every: int = 0
    repeat: int = 1
    # synthetic data
    H: int = 2000
    N_z: int = 8
    T: int = 5
    p: int = 4
    N: int = 20000
    n_test: int = 4000
    N_S: int = 24
    eta: float = 0.1
    target_positive_rate: float = 0.5
    within_domain: str = "uniform"
    zipf_s: float = 1.1
    # graph
    delta: int = 2
    K: int = 8
    # ingestion
    history: int = 50
    cap: int | None = None
    # bound
    D: int = 3
    R_max: float = 1.0
    W_norm: float = 1.0
    l_M: float = 1.0
    confidence: float = 0.05
    variant: str = "thm2"
    sweep_param: str | None = None
    sweep_values: list | None = None
    # islands
    islands: list = dataclasses.field(default_factory=lambda: [3, 5, 8])
    # paths
    samples: str | None = None
    test_samples: str | None = None
    graph: str | None = None
    sequences: str | None = None
    domains: str | None = None
    checkpoint: str | None = None
    embeddings: str | None = None
    ratings: str | None = None
    reviews: str | None = None
    out: str | None = None
    out_dir: str | None = None

    def train_config(self):
        from .optim import TrainConfig

        return TrainConfig(lr0=self.lr0, decay_gamma=self.decay_gamma,
                           decay_interval=self.decay_interval, beta1=self.beta1, beta2=self.beta2,
                           eps=self.eps, batch_size=self.batch_size, lam=self.lam,
                           epochs=self.epochs, seed=self.seed, fusion_mode=self.fusion_mode,
                           backend=self.backend, d=self.d, hidden=tuple(self.hidden),
                           att_grad=self.att_grad, freeze_residual=self.freeze_residual,
                           eval_every=self.eval_every)

    def synth_config(self):
        from .synth import SynthConfig

        return SynthConfig(H=self.H, N_z=self.N_z, T=self.T, p=self.p, N=self.N,
                           n_test=self.n_test, N_S=self.N_S, eta=self.eta,
                           target_positive_rate=self.target_positive_rate,
                           within_domain=self.within_domain, zipf_s=self.zipf_s, seed=self.seed)

    def bound_params(self):
        from .theory import BoundParams

        return BoundParams(D=self.D, d=self.d, T=self.T, p=self.p, N=self.N, N_z=self.N_z,
                           N_S=self.N_S, R_max=self.R_max, W_norm=self.W_norm, l_M=self.l_M,
                           delta=self.confidence)


ALIASES = {"lambda": "lam"}
FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    default = FIELDS[name].default
    if default is dataclasses.MISSING:
        default = FIELDS[name].default_factory()
    if value is None or isinstance(default, list) or default is None:
        return value
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                return value.lower() in ("true", "1")
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"field {name!r}: cannot interpret {value!r}") from None
    return value


def _validate(cfg: RunConfig) -> None:
    if cfg.lam < 0:
        raise ConfigError("field 'lambda' must be >= 0")
    if cfg.delta < 1:
        raise ConfigError("field 'delta' must be >= 1")
    if cfg.K < 1:
        raise ConfigError("field 'K' must be >= 1")
    if cfg.repeat < 1:
        raise ConfigError("field 'repeat' must be >= 1")
    try:
        cfg.train_config()
        cfg.synth_config()
        cfg.bound_params()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults < JSON file < explicit overrides < ``RESEMBED_SEED``."""
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(p.read_text() or "{}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        for key, value in raw.items():
            name = ALIASES.get(key, key)
            if name not in FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            values[name] = _coerce(name, value)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[ALIASES.get(key, key)] = _coerce(ALIASES.get(key, key), value)
    if os.environ.get("RESEMBED_SEED"):
        values["seed"] = _coerce("seed", os.environ["RESEMBED_SEED"])
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _need(cfg: RunConfig, *names: str, exists=True) -> None:
    for name in names:
        value = getattr(cfg, name)
        if value is None:
            raise ConfigError(f"missing required path {name!r}")
        if exists and not Path(value).exists():
            raise ConfigError(f"{name}: no such file {value}")


def _out_dir(cfg: RunConfig) -> Path:
    if cfg.out_dir is None:
        raise ConfigError("missing required path 'out_dir'")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------------ commands

def cmd_synth(cfg: RunConfig) -> int:
    from .data import write_samples
    from .graph import write_sequences
    from .synth import generate, write_domains, write_hidden

    out = _out_dir(cfg)
    g = generate(cfg.synth_config())
    write_samples(out / "train.jsonl", g["train"])
    write_samples(out / "test.jsonl", g["test"])
    write_domains(out / "domains.json", g["domains"])
    write_hidden(out / "hidden_train.jsonl", g["hidden_train"], g["target_domain_train"])
    write_hidden(out / "hidden_test.jsonl", g["hidden_test"], g["target_domain_test"])
    write_sequences(out / "sequences.jsonl",
                    [(f"s{i}", list(h[h >= 0])) for i, h in enumerate(g["train"].hist)])
    print(f"wrote {len(g['train'])} train / {len(g['test'])} test samples to {out}")
    return 0


def cmd_ingest(cfg: RunConfig, kind: str) -> int:
    from .ingest import ingest_amazon, ingest_movielens

    if kind == "movielens":
        _need(cfg, "ratings")
        res = ingest_movielens(cfg.ratings, n=cfg.history, cap=cfg.cap)
    else:
        _need(cfg, "reviews")
        res = ingest_amazon(cfg.reviews, cap=cfg.cap, seed=cfg.seed)
    out = _out_dir(cfg)
    res.write(out)
    print(f"users train={len(res.train_users)} test={len(res.test_users)} items={len(res.vocab)} "
          f"samples train={len(res.train)} test={len(res.test)} skipped={res.skipped}")
    return 0


def _load_sequences(cfg: RunConfig):
    from .data import read_samples
    from .graph import read_sequences

    if cfg.sequences is not None:
        _need(cfg, "sequences")
        return [items for _, items in read_sequences(cfg.sequences)]
    _need(cfg, "samples")
    data = read_samples(cfg.samples)
    return [h[h >= 0] for h in data.hist]


def _n_items(cfg: RunConfig, *datasets) -> int:
    ids = [0]
    for data in datasets:
        if data is not None and len(data):
            ids.append(int(max(data.hist.max(), data.target.max())) + 1)
    if cfg.domains is not None:
        from .synth import read_domains

        ids.append(read_domains(cfg.domains).H)
    return max(ids)


def cmd_build_graph(cfg: RunConfig) -> int:
    from .graph import interest_graph, write_graph

    seqs = _load_sequences(cfg)
    n_items = max(cfg.H if cfg.samples is None and cfg.sequences is None else 0,
                  1 + max((int(max(s)) for s in seqs if len(s)), default=-1))
    if cfg.domains is not None:
        from .synth import read_domains

        n_items = max(n_items, read_domains(cfg.domains).H)
    if cfg.out is None:
        raise ConfigError("missing required path 'out'")
    Z = interest_graph(seqs, n_items, cfg.delta, cfg.K)
    write_graph(Z, cfg.out)
    print(f"graph: {n_items} items, {Z.nnz} directed edges -> {cfg.out}")
    return 0


def _train_once(cfg: RunConfig, out: Path) -> dict:
    from .data import read_samples
    from .embedding import write_embeddings
    from .graph import interest_graph, read_graph, write_graph
    from .metrics import aggregation_stats
    from .nets import mean_spectral_norm, save_checkpoint
    from .optim import train, write_metrics
    from .synth import read_domains

    tcfg = cfg.train_config()
    data = read_samples(cfg.samples)
    test = read_samples(cfg.test_samples) if cfg.test_samples else None
    n_items = _n_items(cfg, data, test)
    graph = assignment = None
    graph_file, graph_local = None, False
    if tcfg.fusion_mode in ("avg", "gcn", "att"):
        if cfg.graph is not None:
            graph = read_graph(cfg.graph)
            n_items = max(n_items, graph.shape[0])
            graph_file = cfg.graph
        else:
            seqs = _load_sequences(cfg) if cfg.sequences else [h[h >= 0] for h in data.hist]
            graph = interest_graph(seqs, n_items, cfg.delta, cfg.K)
            write_graph(graph, out / "graph.txt")
            graph_file = "graph.txt"
            graph_local = True
        if graph.shape[0] < n_items:
            raise ConfigError(f"graph covers {graph.shape[0]} items but data uses {n_items}")
    if cfg.domains is not None:
        assignment = read_domains(cfg.domains).assignment
    if tcfg.fusion_mode == "oracle" and assignment is None:
        raise ConfigError("fusion_mode 'oracle' needs 'domains'")
    result = train(data, tcfg, n_items, graph=graph, assignment=assignment, test_data=test)
    model = result.model
    write_metrics(out / "metrics.csv", result.metrics)
    write_embeddings(out / "embeddings.csv", model.embedding_table())
    summary = {"config": tcfg.as_dict(), "n_items": n_items, "steps": result.steps,
               "graph": graph_file, "domains": cfg.domains,
               "W_norm": mean_spectral_norm(model.mlp)}
    if result.metrics:
        summary["final"] = result.metrics[-1]
    if assignment is not None:
        summary["aggregation"] = aggregation_stats(model.embedding_table(), assignment,
                                                   model.embed.R, model.central_table()).as_dict()
    save_checkpoint(out / "checkpoint.json", model.mlp, model.embed,
                    {"config": tcfg.as_dict(), "n_items": n_items, "graph": graph_file,
                     "graph_in_run_dir": graph_local,
                     "n_domains": int(model.embed.C_b.shape[0]) if tcfg.fusion_mode == "oracle" else None})
    _dump_json(out / "summary.json", summary)
    return summary


def cmd_train(cfg: RunConfig) -> int:
    _need(cfg, "samples")
    if cfg.test_samples:
        _need(cfg, "test_samples")
    if cfg.graph:
        _need(cfg, "graph")
    if cfg.domains:
        _need(cfg, "domains")
    out = _out_dir(cfg)
    for k in range(cfg.repeat):
        run_cfg = dataclasses.replace(cfg, seed=cfg.seed + k)
        target = out if cfg.repeat == 1 else out / f"seed_{run_cfg.seed}"
        target.mkdir(parents=True, exist_ok=True)
        summary = _train_once(run_cfg, target)
        final = summary.get("final", {})
        print(f"seed {run_cfg.seed}: train_loss={final.get('train_loss')} "
              f"test_auc={final.get('test_auc')} -> {target}")
    return 0


def _load_model(cfg: RunConfig):
    from .graph import read_graph
    from .model import ResEmbeddingModel
    from .nets import load_checkpoint
    from .synth import read_domains

    _need(cfg, "checkpoint")
    mlp, embed, meta = load_checkpoint(cfg.checkpoint)
    tc = meta["config"]
    graph = assignment = None
    if tc["fusion_mode"] in ("avg", "gcn", "att"):
        path = cfg.graph or meta.get("graph")
        if path is None:
            raise ConfigError("checkpoint needs a graph; pass 'graph'")
        if cfg.graph is None and meta.get("graph_in_run_dir"):
            path = str(Path(cfg.checkpoint).parent / path)
        if not Path(path).exists():
            raise ConfigError(f"graph: no such file {path}")
        graph = read_graph(path)
    if tc["fusion_mode"] == "oracle":
        if cfg.domains is None:
            raise ConfigError("oracle checkpoint needs 'domains'")
        _need(cfg, "domains")
        assignment = read_domains(cfg.domains).assignment
    return ResEmbeddingModel(tc["backend"], tc["fusion_mode"], mlp, embed, graph, assignment,
                             tc.get("att_grad", "stop"))


def cmd_eval(cfg: RunConfig) -> int:
    from .data import read_samples
    from .metrics import aggregation_stats, auc
    from .nets import cross_entropy_logit, mean_spectral_norm
    from .synth import read_domains

    model = _load_model(cfg)
    _need(cfg, "samples")
    data = read_samples(cfg.samples)
    data.validate(model.embed.n_items)
    logits = model.logits(data)
    loss, _ = cross_entropy_logit(logits, data.label)
    report = {"n": len(data), "loss": float(loss.mean()), "W_norm": mean_spectral_norm(model.mlp)}
    try:
        report["auc"] = auc(logits, data.label)
    except ValueError:
        report["auc"] = None
    if cfg.domains is not None:
        stats = aggregation_stats(model.embedding_table(), read_domains(cfg.domains).assignment,
                                  model.embed.R, model.central_table())
        report["aggregation"] = stats.as_dict()
    text = json.dumps(report, indent=2, sort_keys=True)
    if cfg.out:
        Path(cfg.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_export_emb(cfg: RunConfig) -> int:
    from .embedding import write_embeddings

    model = _load_model(cfg)
    if cfg.out is None:
        raise ConfigError("missing required path 'out'")
    write_embeddings(cfg.out, model.embedding_table())
    print(f"wrote {model.embed.n_items} embeddings to {cfg.out}")
    return 0


def cmd_verify_prop1(cfg: RunConfig) -> int:
    from .embedding import read_embeddings
    from .graph import read_graph, write_graph
    from .theory import island_graph, prop1_verify

    if cfg.graph is not None:
        _need(cfg, "graph")
        Z = read_graph(cfg.graph)
        if cfg.embeddings is not None:
            _need(cfg, "embeddings")
            X = read_embeddings(cfg.embeddings)
        else:
            X = np.random.default_rng(cfg.seed).uniform(-10, 10, size=(Z.shape[0], cfg.d))
    else:
        Z = island_graph([int(m) for m in cfg.islands])
        X = np.random.default_rng(cfg.seed).uniform(-10, 10, size=(Z.shape[0], cfg.d))
        if cfg.out_dir is not None:
            write_graph(Z, _out_dir(cfg) / "islands.txt")
    report = prop1_verify(Z, X)
    text = report.to_json(cfg.out)
    if cfg.out is None:
        print(text)
    worst = max(report.max_island_deviation, report.max_pair_deviation)
    print(f"islands={len(report.islands)} max_deviation={worst:.3e}", file=sys.stderr)
    return 0 if worst < 1e-9 else 1


def cmd_bound(cfg: RunConfig) -> int:
    from .theory import BoundParams, theorem_bound_inf, write_bound_sweep

    base = cfg.bound_params()
    rows = []
    if cfg.sweep_param is None:
        r_star, b = theorem_bound_inf(base, cfg.variant)
        rows.append(("base", 0.0, r_star, b))
    else:
        if cfg.sweep_param not in {f.name for f in dataclasses.fields(BoundParams)}:
            raise ConfigError(f"field 'sweep_param': unknown bound parameter {cfg.sweep_param!r}")
        for v in cfg.sweep_values or []:
            try:
                params = dataclasses.replace(base, **{cfg.sweep_param: type(getattr(base, cfg.sweep_param))(v)})
            except ValueError as exc:
                raise ConfigError(f"field 'sweep_values': {exc}") from None
            r_star, b = theorem_bound_inf(params, cfg.variant)
            rows.append((cfg.sweep_param, float(v), r_star, b))
    if cfg.out:
        write_bound_sweep(cfg.out, rows)
    print("param,value,r_star,bound")
    for name, v, r, b in rows:
        print(f"{name},{v!r},{r!r},{b!r}")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    from .gradcheck import run_all

    rows = run_all(seed=cfg.seed)
    ok = True
    print("backend,fusion,lambda,max_rel_err,checked,skipped,pass")
    for r in rows:
        passed = r["max_rel_err"] < 1e-4
        ok &= passed
        print(f"{r['backend']},{r['fusion']},{r['lambda']},{r['max_rel_err']:.3e},"
              f"{r['checked']},{r['skipped']},{'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


HANDLERS = {
    "synth": cmd_synth,
    "ingest-movielens": lambda c: cmd_ingest(c, "movielens"),
    "ingest-amazon": lambda c: cmd_ingest(c, "amazon"),
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "eval": cmd_eval,
    "export-emb": cmd_export_emb,
    "verify-prop1": cmd_verify_prop1,
    "bound": cmd_bound,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resembed", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS, metavar="command",
                        help="one of: " + ", ".join(COMMANDS))
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    group = parser.add_argument_group("config overrides (flags win over the file)")
    for name in FIELDS:
        flag = "--" + name.replace("_", "-")
        if name == "lam":
            group.add_argument("--lambda", "--lam", dest="lam", metavar="LAMBDA")
        elif isinstance(FIELDS[name].default, list) or FIELDS[name].default is dataclasses.MISSING:
            group.add_argument(flag, dest=name, type=json.loads, metavar="JSON")
        elif name == "sweep_values":
            group.add_argument(flag, dest=name, type=json.loads, metavar="JSON")
        else:
            group.add_argument(flag, dest=name, metavar=name.upper())
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {name: getattr(args, name) for name in FIELDS}
    try:
        cfg = parse_config(args.config, overrides)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=max(1, args.threads)):
            return HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"resembed {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        logger.debug("failure", exc_info=True)
        print(f"resembed {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
