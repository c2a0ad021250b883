"""Full-data comparison of the conditional model against a single shared
embedding trained by the same pipeline.

Real social-recommendation dumps are not bundled.  Point ``--edges`` and
``--behavior`` at them, e.g.::

    python scripts/full_data_run.py --edges ciao/trust.txt \
        --behavior beauty=ciao/beauty.txt --behavior book=ciao/book.txt \
        --out runs/ciao

Hours of CPU time at the default full-size settings.  ``--synthetic`` swaps in a
generated dataset so the plumbing can be exercised in seconds.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from condnet.config import TrainConfig, read_config
from condnet.evaluation import evaluate
from condnet.graph import filter_min_activity, load_behavior_records, load_edge_list, split_dataset
from condnet.synthetic import synth_gen
from condnet.training import train
from condnet.variants import build_variant


def load(args, cfg):
    if args.synthetic:
        data = synth_gen(num_nodes=args.synthetic, seed=cfg.seed)
        return data.graph, data.records
    graph = load_edge_list(args.edges)
    paths = dict(spec.split("=", 1) for spec in args.behavior)
    records = load_behavior_records(paths, graph)
    return filter_min_activity(graph, records, cfg.min_links, cfg.min_records)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--edges")
    ap.add_argument("--behavior", action="append", default=[], metavar="NAME=PATH")
    ap.add_argument("--synthetic", type=int, metavar="NODES", help="use a generated dataset instead")
    ap.add_argument("--config")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--out", default="full_run")
    args = ap.parse_args(argv)
    if not args.synthetic and not (args.edges and args.behavior):
        ap.error("need --edges and --behavior, or --synthetic")

    cfg = read_config(args.config) if args.config else TrainConfig()
    if args.epochs:
        cfg = cfg.replace(epochs=args.epochs)
    graph, records = load(args, cfg)
    split = split_dataset(records, cfg.split_ratios, cfg.seed)
    print(f"{graph.num_nodes} users, {graph.num_edges} links, categories {records.categories}")

    summary = {}
    for variant in ("full", "shared"):
        start = time.perf_counter()
        params = build_variant(cfg, variant, graph.num_nodes, records.num_items, records.categories)
        best, history = train(params, graph, records, split, cfg)
        res = evaluate(best, graph, records, split, "test", args.runs, cfg.seed, count=cfg.eval_negatives)
        summary[variant] = {c: {"recall@5": res.recall[c][5], "ndcg@5": res.ndcg[c][5]}
                            for c in res.categories}
        summary[variant]["mean_recall@5"] = res.mean("recall", 5)
        print(f"{variant:>6}: mean Recall@5 {res.mean('recall', 5):.4f}  "
              f"({len(history)} epochs, {time.perf_counter() - start:.0f}s)")

    gap = summary["full"]["mean_recall@5"] - summary["shared"]["mean_recall@5"]
    summary["full_minus_shared"] = gap
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(f"conditional - shared = {gap:+.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
