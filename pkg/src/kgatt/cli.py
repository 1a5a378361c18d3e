"""Command-line pipeline: prepare conditions, generate synthetic graphs, train,
evaluate, and export interpretation reports.

Every subcommand writes into one output directory and echoes its effective
configuration there as ``config.json``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import attention as att
from . import interpret
from .encoder import encode_all, write_embeddings_csv
from .evaluation import evaluate
from .graph import (
    KnowledgeGraph, build_encoder_index, load_snapshot, save_snapshot, write_provenance,
    write_triples,
)
from .perturb import CONDITIONS, build_condition, dd_knowledge_graph, generate_dd, split_dd
from .training import TrainConfig, load_checkpoint, save_checkpoint, train, write_training_log

log = logging.getLogger("kgatt")


@dataclasses.dataclass
class RunConfig:
    # training (mirrors TrainConfig)
    dim: int = 300
    n_neg: int = 10
    emb_dropout: float = 0.5
    link_dropout: float = 0.5
    lr: float = 1e-2
    epochs: int = 200
    batch_size: int = 1024
    decoder: str = "distmult"
    attention: str = "learned"
    use_bias: bool = True
    eval_every: int = 1
    valid_max_triples: int | None = None
    # data / condition
    data: str | None = None
    train: str | None = None
    valid: str | None = None
    test: str | None = None
    graph: str | None = None
    checkpoint: list[str] | None = None
    condition: str = "full"
    fraction: float | None = None
    add_inverse: bool = True
    split: str = "test"
    # synthetic graphs
    p: float = 0.75
    q: float = 0.0
    nodes: int = 1000
    gold_frac: float = 0.5
    add_frac: float = 0.25
    # interpretation
    k: int = 6
    bins: int = 20
    flag_decile: float | None = None
    external_labels: str | None = None
    # run
    out: str | None = None
    seed: int = 0
    threads: int | None = None

    def train_config(self) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})


FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def load_config_file(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    unknown = sorted(set(doc) - FIELDS)
    if unknown:
        raise ValueError(f"{path}: unknown config key(s): {', '.join(unknown)}")
    return doc


def resolve(args: argparse.Namespace) -> RunConfig:
    """Defaults < config file < command-line flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for k, v in vars(args).items():
        if k in FIELDS:
            values[k] = v
    if isinstance(values.get("checkpoint"), str):
        values["checkpoint"] = [values["checkpoint"]]
    return RunConfig(**values)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _out_dir(cfg: RunConfig, command: str) -> Path:
    if not cfg.out:
        raise ValueError(f"{command}: --out is required")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **dataclasses.asdict(cfg)}
    (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def _read_graph(cfg: RunConfig) -> KnowledgeGraph:
    if cfg.graph:
        path = Path(cfg.graph)
        if path.is_dir():
            path = path / "graph.json"
        if not path.exists():
            raise FileNotFoundError(f"graph snapshot not found: {path}")
        kg = load_snapshot(path)
        return kg if kg.index is not None else build_encoder_index(kg, cfg.add_inverse)
    paths = {"train": cfg.train, "valid": cfg.valid, "test": cfg.test}
    if cfg.data:
        root = Path(cfg.data)
        for name in paths:
            if paths[name] is None and (root / f"{name}.txt").exists():
                paths[name] = str(root / f"{name}.txt")
    if not paths["train"]:
        raise ValueError("no input graph: pass --graph, --data or --train")
    for p in paths.values():
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(f"triple file not found: {p}")
    kg = KnowledgeGraph.from_files(paths["train"], paths["valid"], paths["test"])
    return build_encoder_index(kg, cfg.add_inverse)


def _checkpoints(cfg: RunConfig):
    if not cfg.checkpoint:
        raise ValueError("--checkpoint is required")
    runs = []
    for path in cfg.checkpoint:
        p = Path(path)
        if p.is_dir():
            p = p / "checkpoint.npz"
        if not p.exists():
            raise FileNotFoundError(f"checkpoint not found: {p}")
        runs.append(load_checkpoint(p)[0])
    return runs


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_graph_dir(out: Path, kg: KnowledgeGraph) -> None:
    save_snapshot(kg, out / "graph.json")
    for name, arr in kg.splits.items():
        write_triples(out / f"{name}.txt", arr, kg.vocab)
    write_provenance(kg, out / "provenance.csv")


# ------------------------------------------------------------ subcommands

def cmd_prepare(cfg: RunConfig) -> None:
    kg = _read_graph(cfg)
    rng = np.random.default_rng(cfg.seed)
    cond = build_condition(kg, cfg.condition, rng, fraction=cfg.fraction, add_inverse=cfg.add_inverse)
    out = _out_dir(cfg, "prepare")
    _write_graph_dir(out, cond.graph)
    stats = {"condition": cond.name, "fraction": cond.fraction, "input_edges": len(kg.train),
             "adjacency_edges": cond.n_adjacency, "target_edges": cond.n_targets,
             "tags": cond.tag_counts()}
    _write_json(out / "condition.json", stats)
    print(f"condition={cond.name} input_edges={len(kg.train)} adjacency_edges={cond.n_adjacency} "
          f"target_edges={cond.n_targets}")


def cmd_gen_dd(cfg: RunConfig) -> None:
    rng = np.random.default_rng(cfg.seed)
    graph = generate_dd(cfg.p, cfg.q, cfg.nodes, rng)
    split = split_dd(graph, cfg.gold_frac, cfg.add_frac, rng)
    kg = dd_knowledge_graph(graph, split, add_inverse=cfg.add_inverse)
    out = _out_dir(cfg, "gen-dd")
    with open(out / "dd_edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for u, v in graph.edges.tolist():
            fh.write(f"n{u}\tinteracts\tn{v}\n")
    _write_graph_dir(out, kg)
    stats = {"nodes": graph.n_nodes, "edges": int(len(graph.edges)),
             "edge_vertex_ratio": graph.edge_vertex_ratio, "p": cfg.p, "q": cfg.q,
             "gold": int(len(split.gold)), "add": int(len(split.add)),
             "noise": int(len(split.noise)), "held_out": int(len(split.held_out))}
    _write_json(out / "dd_stats.json", stats)
    print(f"nodes={graph.n_nodes} edges={len(graph.edges)} "
          f"edge_vertex_ratio={graph.edge_vertex_ratio:.4f}")


def cmd_train(cfg: RunConfig) -> None:
    kg = _read_graph(cfg)
    tcfg = dataclasses.replace(cfg.train_config(), seed=cfg.seed)
    out = _out_dir(cfg, "train")
    params, report = train(tcfg, kg)
    save_checkpoint(out / "checkpoint.npz", params, tcfg)
    write_training_log(out / "train_log.csv", report)
    _write_json(out / "train_summary.json", {
        "epochs": len(report.losses), "best_epoch": report.best_epoch,
        "initial_loss": report.initial_loss, "final_loss": report.final_loss,
        "snapshot_id": report.snapshot_id, "config_digest": tcfg.digest(),
    })
    # wall-clock lives apart from the reproducible artifacts
    _write_json(out / "timing.json", {"wall_clock_seconds": report.wall_clock})
    if not (out / "graph.json").exists() and not cfg.graph:
        save_snapshot(kg, out / "graph.json")
    print(f"trained {len(report.losses)} epochs, best_epoch={report.best_epoch}, "
          f"snapshot={report.snapshot_id[:12]}")


def cmd_evaluate(cfg: RunConfig) -> None:
    kg = _read_graph(cfg)
    params = _checkpoints(cfg)[0]
    out = _out_dir(cfg, "evaluate")
    rep = evaluate(params, kg, split=cfg.split)
    rep.write(out / "metrics.json", out / "ranks.csv", kg)
    m = rep.metrics()
    print(" ".join(f"{k}={m[k]:.4f}" for k in sorted(m) if k != "n_queries"))


def cmd_interrogate(cfg: RunConfig, triple) -> None:
    kg = _read_graph(cfg)
    runs = _checkpoints(cfg)
    out = _out_dir(cfg, "interrogate")
    rep = interpret.occlusion_scan(runs[0], kg, tuple(triple), runs=runs)
    rep.write(out / "occlusion.csv", out / "occlusion_summary.json")
    print(f"baseline={rep.baseline:.6f} edges={len(rep.rows)}")


def cmd_influencers(cfg: RunConfig, entity: str) -> None:
    kg = _read_graph(cfg)
    runs = _checkpoints(cfg)
    out = _out_dir(cfg, "influencers")
    coefs = [p.coefficients(kg).coef for p in runs]
    rep = interpret.rank_influencers(coefs, kg, entity, cfg.k)
    rep.write(out / "influencers.csv")
    if rep.notice:
        print(rep.notice)
    print(f"top={len(rep.top)} bottom={len(rep.bottom)}")


def cmd_export_weights(cfg: RunConfig) -> None:
    kg = _read_graph(cfg)
    runs = _checkpoints(cfg)
    out = _out_dir(cfg, "export-weights")
    params = runs[0]
    norm = params.coefficients(kg)
    att.write_weights_csv(out / "weights.csv", kg, params.attention, norm)
    interpret.relation_weight_distributions(norm, kg, cfg.bins).write(out / "histograms.csv")
    interpret.relation_weight_distributions(norm, kg, cfg.bins, group_by="provenance",
                                            relative=True).write(out / "histograms_provenance.csv")
    write_embeddings_csv(out / "embeddings.csv", encode_all(params, kg), kg)
    summary = {"n_edges": len(norm), "zero_budget_nodes": list(norm.zero_nodes)}
    if cfg.flag_decile is not None:
        flags = interpret.flag_low_weight_edges(norm, kg, cfg.flag_decile)
        flags.write(out / "flagged.csv")
        summary["flagged"] = len(flags.rows)
        summary["flag_low_confidence"] = flags.low_confidence
    if len(runs) > 1:
        sim = interpret.weight_self_similarity(norm, runs[1].coefficients(kg))
        sim.write(out / "self_similarity.csv")
        summary["self_similarity_r"] = sim.r
        summary["self_similarity_notice"] = sim.notice
    if cfg.external_labels:
        labels = interpret.read_external_labels(cfg.external_labels, kg)
        summary["external_labels"] = interpret.external_label_curve(norm, kg, labels)
    _write_json(out / "summary.json", summary)
    print(f"wrote {len(norm)} edge weights to {out / 'weights.csv'}")


# ------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=S, help="JSON run config; flags override it")
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--threads", type=int, default=S, help="cap on BLAS worker threads")
    common.add_argument("--out", default=S, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=S)

    graph_in = argparse.ArgumentParser(add_help=False)
    graph_in.add_argument("--graph", default=S, help="graph directory or graph.json snapshot")
    graph_in.add_argument("--data", default=S, help="directory with train/valid/test .txt files")
    graph_in.add_argument("--train", default=S)
    graph_in.add_argument("--valid", default=S)
    graph_in.add_argument("--test", default=S)
    graph_in.add_argument("--add-inverse", dest="add_inverse", type=_bool, default=S)

    ckpt = argparse.ArgumentParser(add_help=False)
    ckpt.add_argument("--checkpoint", action="append", default=S,
                      help="checkpoint file or run directory; repeat for multiple runs")

    parser = argparse.ArgumentParser(prog="kgatt", description=__doc__.split("\n")[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common, graph_in], help="build an experimental condition")
    p.add_argument("--condition", choices=CONDITIONS, default=S)
    p.add_argument("--fraction", type=float, default=S, help="noise fraction for sweep")

    p = sub.add_parser("gen-dd", parents=[common], help="generate a duplication-divergence graph")
    p.add_argument("--p", type=float, default=S)
    p.add_argument("--q", type=float, default=S)
    p.add_argument("--nodes", type=int, default=S)
    p.add_argument("--gold-frac", dest="gold_frac", type=float, default=S)
    p.add_argument("--add-frac", dest="add_frac", type=float, default=S)
    p.add_argument("--add-inverse", dest="add_inverse", type=_bool, default=S)

    p = sub.add_parser("train", parents=[common, graph_in], help="train a model")
    for name, typ in (("dim", int), ("n-neg", int), ("emb-dropout", float),
                      ("link-dropout", float), ("lr", float), ("epochs", int),
                      ("batch-size", int), ("eval-every", int), ("valid-max-triples", int)):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=typ, default=S)
    p.add_argument("--decoder", choices=("distmult", "complex"), default=S)
    p.add_argument("--attention", choices=("learned", "fixed"), default=S)
    p.add_argument("--use-bias", dest="use_bias", type=_bool, default=S)

    p = sub.add_parser("evaluate", parents=[common, graph_in, ckpt], help="rank evaluation")
    p.add_argument("--split", choices=("train", "valid", "test"), default=S)

    p = sub.add_parser("interrogate", parents=[common, graph_in, ckpt],
                       help="occlusion scan for one triple")
    p.add_argument("triple", nargs=3, metavar=("SUBJECT", "RELATION", "OBJECT"))

    p = sub.add_parser("influencers", parents=[common, graph_in, ckpt],
                       help="top/bottom weighted incoming edges of an entity")
    p.add_argument("entity")
    p.add_argument("-k", dest="k", type=int, default=S)

    p = sub.add_parser("export-weights", parents=[common, graph_in, ckpt],
                       help="edge weights, histograms, embeddings and trust reports")
    p.add_argument("--bins", type=int, default=S)
    p.add_argument("--flag-decile", dest="flag_decile", type=float, default=S)
    p.add_argument("--external-labels", dest="external_labels", default=S,
                   help="CSV subject,relation,object,score")
    return parser


def _threads(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        with _threads(cfg.threads):
            if args.command == "prepare":
                cmd_prepare(cfg)
            elif args.command == "gen-dd":
                cmd_gen_dd(cfg)
            elif args.command == "train":
                cmd_train(cfg)
            elif args.command == "evaluate":
                cmd_evaluate(cfg)
            elif args.command == "interrogate":
                cmd_interrogate(cfg, args.triple)
            elif args.command == "influencers":
                cmd_influencers(cfg, args.entity)
            elif args.command == "export-weights":
                cmd_export_weights(cfg)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"kgatt {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
