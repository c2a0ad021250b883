"""Command-line entry points.

Every command is a thin wrapper over the library and writes a
``manifest.json`` next to its outputs (config digest, seed and content
hashes of the inputs).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import TrainConfig, read_config, write_config
from .exceptions import CondNetError
from .export import export_embeddings, export_masks
from .gradcheck import run_all
from .graph import (
    filter_min_activity,
    load_behavior_records,
    load_dataset,
    load_edge_list,
    read_split_manifest,
    save_dataset,
    split_dataset,
    write_split_manifest,
)
from .params import file_digest, load_checkpoint, save_checkpoint
from .synthetic import synth_gen, write_synthetic
from .training import train, write_history
from .evaluation import evaluate
from .validation import check_params_match
from .variants import build_variant, save_transfer, transfer_new_category

logger = logging.getLogger("condnet")


def _config(args) -> TrainConfig:
    cfg = read_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _inputs(args):
    paths = []
    for attr in ("config", "edges", "checkpoint", "split"):
        value = getattr(args, attr, None)
        if value:
            paths.append(Path(value))
    for spec in getattr(args, "behavior", None) or []:
        paths.append(Path(spec.split("=", 1)[-1]))
    data = getattr(args, "data", None)
    if data:
        paths.extend(sorted(p for p in Path(data).rglob("*") if p.is_file()))
    return {str(p): file_digest(p) for p in paths}


def _manifest(args, out: Path, cfg=None, **extra):
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": args.command, "argv": sys.argv[1:], "version": __version__,
        "seed": cfg.seed if cfg else args.seed,
        "config_digest": cfg.digest() if cfg else None,
        "config": cfg.to_dict() if cfg else None,
        "inputs": _inputs(args), **extra,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=list)


def _load_split(args, graph, records, cfg):
    if args.split:
        return read_split_manifest(args.split, graph, records, cfg.seed)
    return split_dataset(records, cfg.split_ratios, cfg.seed)


def cmd_synth_gen(args):
    cfg = _config(args)
    data = synth_gen(args.nodes, args.categories, args.communities, args.items_per_community,
                     args.p_in, args.p_out, cfg.seed, args.noise, args.interactions, args.popularity)
    out = Path(args.out)
    write_synthetic(out, data)
    _manifest(args, out, cfg)
    print(f"wrote {data.graph.num_nodes} nodes, {data.graph.num_edges} edges, "
          f"{len(data.records.categories)} categories to {out}")


def cmd_ingest(args):
    cfg = _config(args)
    graph = load_edge_list(args.edges)
    paths = {}
    for spec in args.behavior:
        name, _, path = spec.partition("=")
        if not path:
            path, name = name, Path(name).stem
        paths[name] = path
    records = load_behavior_records(paths, graph)
    min_links = cfg.min_links if args.min_links is None else args.min_links
    min_records = cfg.min_records if args.min_records is None else args.min_records
    graph, records = filter_min_activity(graph, records, min_links, min_records)
    out = Path(args.out)
    save_dataset(out, graph, records)
    _manifest(args, out, cfg)
    print(f"{graph.num_nodes} users, {graph.num_edges} links")
    for name, m, pairs in zip(records.categories, records.num_items, records.interactions):
        print(f"{name}: {m} items, {len(pairs)} interactions")


def cmd_split(args):
    cfg = _config(args)
    graph, records = load_dataset(args.data)
    split = split_dataset(records, cfg.split_ratios, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_split_manifest(out / "split.csv", split, graph, records)
    _manifest(args, out, cfg)


def cmd_train(args):
    cfg = _config(args)
    if args.variant:
        cfg = cfg.replace(variant=args.variant)
    if args.epochs:
        cfg = cfg.replace(epochs=args.epochs)
    graph, records = load_dataset(args.data)
    split = _load_split(args, graph, records, cfg)
    params = build_variant(cfg, cfg.variant, graph.num_nodes, records.num_items, records.categories)
    best, history = train(params, graph, records, split, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.npz", best, {"config": cfg.to_dict()})
    write_history(out / "history.csv", history, cfg.eval_k)
    write_config(out / "config.cfg", cfg)
    _manifest(args, out, cfg, checkpoint_id=best.checksum())
    print(f"trained {len(history)} epochs; checkpoint {out / 'checkpoint.npz'}")


def cmd_evaluate(args):
    cfg = _config(args)
    graph, records = load_dataset(args.data)
    params = load_checkpoint(args.checkpoint)
    check_params_match(params, graph, records)
    split = _load_split(args, graph, records, cfg)
    fanouts = cfg.fanouts if cfg.inference == "sampled" else None
    result = evaluate(params, graph, records, split, args.fold, args.runs, cfg.seed,
                      count=cfg.eval_negatives, fanouts=fanouts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write_csv(out / "results.csv")
    _manifest(args, out, cfg)
    for c in result.categories:
        print(f"{c}: recall@5={result.recall[c][5]:.4f}±{result.recall_std[c][5]:.4f} "
              f"ndcg@5={result.ndcg[c][5]:.4f}±{result.ndcg_std[c][5]:.4f}")


def cmd_export_embeddings(args):
    cfg = _config(args)
    graph, records = load_dataset(args.data)
    params = load_checkpoint(args.checkpoint)
    check_params_match(params, graph, records)
    fanouts = cfg.fanouts if cfg.inference == "sampled" else None
    out = Path(args.out)
    export_embeddings(params, graph, out, fanouts, cfg.seed)
    _manifest(args, out, cfg)


def cmd_export_masks(args):
    params = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    export_masks(params, out)
    _manifest(args, out)


def cmd_transfer(args):
    cfg = _config(args)
    graph, records = load_dataset(args.data)
    base = load_checkpoint(args.checkpoint)
    split = _load_split(args, graph, records, cfg)
    ext, history, result = transfer_new_category(base, graph, records, split, args.category, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_transfer(out / "transfer.npz", base, ext)
    write_history(out / "history.csv", history, cfg.eval_k)
    result.write_csv(out / "results.csv")
    _manifest(args, out, cfg, base_checkpoint_id=base.checksum())
    c = args.category
    print(f"{c}: recall@5={result.recall[c][5]:.4f} ndcg@5={result.ndcg[c][5]:.4f}")


def cmd_gradcheck(args):
    seed = 0 if args.seed is None else args.seed
    reports = run_all(seed, tolerance=args.tolerance)
    ok = True
    for rep in reports:
        for line in rep.lines():
            print(line)
        ok &= rep.passed
    if args.out:
        _manifest(args, Path(args.out))
    return 0 if ok else 1


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="out")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="condnet", parents=[common])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", parents=[common], help="write a planted multi-aspect dataset")
    p.add_argument("--nodes", type=int, default=400)
    p.add_argument("--categories", type=int, default=2)
    p.add_argument("--communities", type=int, default=2)
    p.add_argument("--items-per-community", type=int, default=50)
    p.add_argument("--p-in", type=float, default=0.05)
    p.add_argument("--p-out", type=float, default=0.005)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--interactions", type=int, default=10)
    p.add_argument("--popularity", type=float, default=1.0)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("ingest", parents=[common], help="load, filter and store a raw dataset")
    p.add_argument("--edges", required=True)
    p.add_argument("--behavior", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--min-links", type=int)
    p.add_argument("--min-records", type=int)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", parents=[common], help="write a seeded train/validation/test split")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common])
    p.add_argument("--data", required=True)
    p.add_argument("--split")
    p.add_argument("--variant", choices=["full", "mcne_a", "mcne_f", "shared"])
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common])
    p.add_argument("--data", required=True)
    p.add_argument("--split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--fold", default="test", choices=["train", "validation", "test"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-embeddings", parents=[common])
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("export-masks", parents=[common])
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_export_masks)

    p = sub.add_parser("transfer", parents=[common], help="adapt a trained model to a new category")
    p.add_argument("--data", required=True)
    p.add_argument("--split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--category", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck, out=None)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        status = args.func(args)
    except (CondNetError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
