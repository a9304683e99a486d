"""Command-line pipeline: ingest, pathsim, split, train, eval, ablate.

Every command writes a manifest.json (resolved config, its sha256, seeds,
library versions) next to its outputs, so a run can be reproduced from the
manifest alone.  Config files are single JSON documents; command-line flags
override config values.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .checkpoint import restore_into, save_tensors
from .evaluate import evaluate, write_trial_ranks
from .graph import (HeteIN, SplitSpec, apply_split_manifest, load_hetein,
                    save_hetein, split_target_edges, write_split_manifest)
from .metapath import parse_metapath, save_similarity_table, top_m_similar
from .model import ModelConfig, Recommender, load_model_config, save_model_config
from .train import TrainConfig, fit, write_loss_trace

_ENV_OUT = "PATHGAT_OUT"

VARIANTS = ("full", "hgat_only", "metapath_only")


class CliError(RuntimeError):
    pass


def _out_dir(args, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    elif os.environ.get(_ENV_OUT):
        out = Path(os.environ[_ENV_OUT]) / command
    else:
        raise CliError("no --out given and PATHGAT_OUT is not set")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_graph(args) -> HeteIN:
    if getattr(args, "graph", None):
        d = Path(args.graph)
        return load_hetein(d / "graph.nodes.tsv", d / "graph.edges.tsv")
    if not (args.nodes and args.edges):
        raise CliError("need --graph DIR or both --nodes and --edges")
    return load_hetein(args.nodes, args.edges)


def _write_manifest(out: Path, command: str, config: dict) -> None:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    doc = {
        "command": command,
        "config": config,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "versions": {
            "pathgat": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
        },
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _add_graph_args(p: argparse.ArgumentParser):
    p.add_argument("--graph", help="directory produced by ingest")
    p.add_argument("--nodes", help="nodes.tsv path")
    p.add_argument("--edges", help="edges.tsv path")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


# -- experiment config -------------------------------------------------------

def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _resolve_model_config(doc: dict, args) -> ModelConfig:
    m = dict(doc.get("model", {}))
    if getattr(args, "embed_dim", None) is not None:
        m["embed_dim"] = args.embed_dim
    if getattr(args, "heads", None) is not None:
        m["heads"] = args.heads
    if getattr(args, "layers", None) is not None:
        m["full_layers"] = args.layers
    if getattr(args, "out_dim", None) is not None:
        m["out_dim"] = args.out_dim
    if getattr(args, "metapaths", None) is not None:
        m["metapaths"] = [s for s in args.metapaths.split(",") if s]
    if getattr(args, "m", None) is not None:
        m["top_m"] = args.m
    return ModelConfig.from_dict(m)


def _resolve_train_config(doc: dict, args) -> TrainConfig:
    t = dict(doc.get("train", {}))
    if getattr(args, "lr", None) is not None:
        t["learning_rate"] = args.lr
    if getattr(args, "batch_size", None) is not None:
        t["batch_size"] = args.batch_size
    if getattr(args, "epochs", None) is not None:
        t["epochs"] = args.epochs
    if getattr(args, "seed", None) is not None:
        t["seed"] = args.seed
    if getattr(args, "checkpoint_every", None) is not None:
        t["checkpoint_every"] = args.checkpoint_every
    return TrainConfig.from_dict(t)


def apply_variant(cfg: ModelConfig, variant: str) -> ModelConfig:
    if variant == "full":
        return cfg
    d = cfg.to_dict()
    if variant == "hgat_only":
        d["metapaths"] = []
    elif variant == "metapath_only":
        d["use_full_channel"] = False
    else:
        raise CliError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return ModelConfig.from_dict(d)


# -- commands ----------------------------------------------------------------

def cmd_ingest(args) -> int:
    out = _out_dir(args, "ingest")
    g = _load_graph(args)
    save_hetein(g, out / "graph.nodes.tsv", out / "graph.edges.tsv")
    stats = {
        "nodes": {t.name: g.n_nodes(t) for t in g.schema.types},
        "edges": {r.name: g.num_edges(r) for r in g.schema.relations},
    }
    with open(out / "stats.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(stats, f, indent=2, sort_keys=True)
        f.write("\n")
    for t in g.schema.types:
        print(f"nodes[{t.name}] = {g.n_nodes(t)}")
    for r in g.schema.relations:
        print(f"edges[{r.name}] = {g.num_edges(r)}")
    _write_manifest(out, "ingest", {"nodes": str(args.nodes), "edges": str(args.edges)})
    return 0


def cmd_pathsim(args) -> int:
    out = _out_dir(args, "pathsim")
    g = _load_graph(args)
    p = parse_metapath(args.metapath, g.schema)
    table = top_m_similar(g, p, args.m)
    dest = out / f"pathsim_{args.metapath}_m{args.m}.jsonl"
    save_similarity_table(table, dest)
    print(f"wrote {dest}")
    _write_manifest(out, "pathsim", {"metapath": args.metapath, "m": args.m})
    return 0


def cmd_split(args) -> int:
    out = _out_dir(args, "split")
    g = _load_graph(args)
    spec = SplitSpec(ratios=tuple(args.ratios), seed=args.seed,
                     target_relation=args.relation)
    holdout = split_target_edges(g, spec)
    dest = out / "split.jsonl"
    write_split_manifest(holdout, dest)
    n = g.num_edges(args.relation)
    print(f"split {n} edges: train={n - len(holdout.val_edges) - len(holdout.test_edges)} "
          f"val={len(holdout.val_edges)} test={len(holdout.test_edges)}")
    _write_manifest(out, "split", {"ratios": list(args.ratios), "seed": args.seed,
                                   "relation": args.relation})
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args, "train")
    g = _load_graph(args)
    doc = _load_config_file(args.config)
    model_cfg = _resolve_model_config(doc, args)
    train_cfg = _resolve_train_config(doc, args)
    variant = args.variant or doc.get("variant", "full")
    model_cfg = apply_variant(model_cfg, variant)

    holdout = apply_split_manifest(g, args.split, model_cfg.target_relation)
    result = fit(holdout.train_graph, train_cfg, model_cfg, checkpoint_dir=out)
    save_tensors(result.model.params, out / "checkpoint.ckpt")
    save_model_config(model_cfg, out / "model_config.json")
    write_loss_trace(result.loss_trace, out / "loss_trace.csv")
    config = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
              "variant": variant, "split": str(args.split)}
    _write_manifest(out, "train", config)
    print(f"trained {train_cfg.epochs} epochs; "
          f"final mean loss {result.loss_trace[-1][1]:.6f}")
    print(f"lr={train_cfg.learning_rate} batch={train_cfg.batch_size} "
          f"epochs={train_cfg.epochs} seed={train_cfg.seed}")
    return 0


def _rebuild_model(g_train: HeteIN, run_dir: Path) -> Recommender:
    from .metapath import build_homograph
    model_cfg = load_model_config(run_dir / "model_config.json")
    homographs = {}
    for label in model_cfg.metapaths:
        p = parse_metapath(label, g_train.schema)
        homographs[label] = build_homograph(top_m_similar(g_train, p, model_cfg.top_m))
    rng = np.random.Generator(np.random.PCG64(0))
    model = Recommender(g_train, model_cfg, rng, homographs)
    restore_into(model.params, run_dir / "checkpoint.ckpt")
    return model


def cmd_eval(args) -> int:
    out = _out_dir(args, "eval")
    g = _load_graph(args)
    run_dir = Path(args.run)
    model_cfg = load_model_config(run_dir / "model_config.json")
    holdout = apply_split_manifest(g, args.split, model_cfg.target_relation)
    model = _rebuild_model(holdout.train_graph, run_dir)
    edges = holdout.test_edges if args.fold == "test" else holdout.val_edges
    report, trials = evaluate(model.export_scorer(), g, edges, args.seed,
                              num_negatives=args.num_negatives,
                              target_relation=model_cfg.target_relation)
    report.write(out / "report.json")
    if args.dump_ranks:
        write_trial_ranks(trials, out / "ranks.csv")
    _write_manifest(out, "eval", {"run": str(args.run), "split": str(args.split),
                                  "seed": args.seed, "fold": args.fold,
                                  "num_negatives": args.num_negatives})
    for k in sorted(report.per_k):
        m = report.per_k[k]
        print(f"k={k} hr={m['hr']:.4f} ndcg={m['ndcg']:.4f} "
              f"precision={m['precision']:.4f} map={m['map']:.4f}")
    print(f"avg hr={report.avg['hr']:.4f} ndcg={report.avg['ndcg']:.4f} "
          f"precision={report.avg['precision']:.4f} map={report.avg['map']:.4f}")
    return 0


def _run_one(g: HeteIN, holdout, model_cfg: ModelConfig, train_cfg: TrainConfig,
             eval_seed: int, num_negatives: int, fold: str) -> dict:
    result = fit(holdout.train_graph, train_cfg, model_cfg)
    edges = holdout.test_edges if fold == "test" else holdout.val_edges
    report, _ = evaluate(result.model.export_scorer(), g, edges, eval_seed,
                         num_negatives=num_negatives,
                         target_relation=model_cfg.target_relation)
    return report.avg


def cmd_ablate(args) -> int:
    out = _out_dir(args, "ablate")
    g = _load_graph(args)
    doc = _load_config_file(args.config)
    base_model = _resolve_model_config(doc, args)
    base_train = _resolve_train_config(doc, args)
    eval_seed = doc.get("eval_seed", 0) if args.eval_seed is None else args.eval_seed
    num_negatives = doc.get("num_negatives", 100)
    fold = args.fold or doc.get("fold", "test")
    holdout = apply_split_manifest(g, args.split, base_model.target_relation)

    runs: list[tuple[str, str, ModelConfig]] = []
    variants = args.variants.split(",") if args.variants else doc.get("variants", [])
    for v in variants:
        runs.append(("variant", v, apply_variant(base_model, v)))
    if args.metapath_sets:
        sets = [s.split(",") if s else [] for s in args.metapath_sets.split(";")]
    else:
        sets = doc.get("metapath_sets", [])
    for labels in sets:
        d = base_model.to_dict()
        d["metapaths"] = list(labels)
        runs.append(("metapaths", "+".join(labels) if labels else "(none)",
                     ModelConfig.from_dict(d)))
    m_values = ([int(x) for x in args.m_sweep.split(",")] if args.m_sweep
                else doc.get("m_values", []))
    for m in m_values:
        d = base_model.to_dict()
        d["top_m"] = m
        runs.append(("m", str(m), ModelConfig.from_dict(d)))
    if not runs:
        raise CliError("nothing to ablate: give --variants, --metapath-sets, or --m-sweep")

    rows = []
    failed = 0
    for axis, label, cfg in runs:
        try:
            avg = _run_one(g, holdout, cfg, base_train, eval_seed, num_negatives, fold)
            rows.append((axis, label, "ok", avg, ""))
            print(f"{axis}={label}: hr={avg['hr']:.4f} ndcg={avg['ndcg']:.4f} "
                  f"precision={avg['precision']:.4f} map={avg['map']:.4f}")
        except Exception as e:  # record and continue with the remaining runs
            failed += 1
            rows.append((axis, label, "error", None, str(e)))
            print(f"{axis}={label}: FAILED ({e})", file=sys.stderr)

    with open(out / "results.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("axis,label,status,hr_avg,ndcg_avg,precision_avg,map_avg,error\n")
        for axis, label, status, avg, err in rows:
            if avg is None:
                f.write(f"{axis},{label},{status},,,,,{err!r}\n")
            else:
                f.write(f"{axis},{label},{status},{avg['hr']!r},{avg['ndcg']!r},"
                        f"{avg['precision']!r},{avg['map']!r},\n")
    config = {"model": base_model.to_dict(), "train": base_train.to_dict(),
              "variants": variants, "metapath_sets": sets, "m_values": m_values,
              "eval_seed": eval_seed, "fold": fold, "num_negatives": num_negatives}
    _write_manifest(out, "ablate", config)
    return 1 if failed else 0


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pathgat",
                                 description="metapath + graph-attention recommender pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a TSV pair and archive the graph")
    _add_graph_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("pathsim", help="precompute a top-m similarity table")
    _add_graph_args(p)
    p.add_argument("--metapath", required=True, help='label like "U-R-U"')
    p.add_argument("--m", type=_positive_int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pathsim)

    p = sub.add_parser("split", help="hold out target edges for val/test")
    _add_graph_args(p)
    p.add_argument("--ratios", type=float, nargs=3, default=[0.8, 0.1, 0.1])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--relation", default="user-recipe")
    p.add_argument("--out")
    p.set_defaults(func=cmd_split)

    def add_train_flags(p):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=_positive_int)
        p.add_argument("--epochs", type=_positive_int)
        p.add_argument("--seed", type=int)
        p.add_argument("--embed-dim", dest="embed_dim", type=_positive_int)
        p.add_argument("--heads", type=_positive_int)
        p.add_argument("--layers", type=_positive_int)
        p.add_argument("--out-dim", dest="out_dim", type=_positive_int)
        p.add_argument("--metapaths", help="comma-separated labels")
        p.add_argument("--m", type=_positive_int)
        p.add_argument("--checkpoint-every", dest="checkpoint_every", type=_positive_int)

    p = sub.add_parser("train", help="fit the model on the train fold")
    _add_graph_args(p)
    add_train_flags(p)
    p.add_argument("--split", required=True, help="split manifest JSONL")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank held-out edges against sampled negatives")
    _add_graph_args(p)
    p.add_argument("--run", required=True, help="train output directory")
    p.add_argument("--split", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fold", choices=("test", "val"), default="test")
    p.add_argument("--num-negatives", dest="num_negatives", type=_positive_int, default=100)
    p.add_argument("--dump-ranks", dest="dump_ranks", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep variants, metapath sets, or m")
    _add_graph_args(p)
    add_train_flags(p)
    p.add_argument("--split", required=True)
    p.add_argument("--variants", help="comma-separated subset of " + ",".join(VARIANTS))
    p.add_argument("--metapath-sets", dest="metapath_sets",
                   help='semicolon-separated comma lists, e.g. "U-R-U;U-R-U,R-U-R"')
    p.add_argument("--m-sweep", dest="m_sweep", help="comma-separated m values")
    p.add_argument("--eval-seed", dest="eval_seed", type=int)
    p.add_argument("--fold", choices=("test", "val"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
