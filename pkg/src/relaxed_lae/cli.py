"""Command line interface: ``relaxed-lae {ingest,split,fit,eval,grid,spectral}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from .evaluation import EvalConfig, evaluate_model
from .experiment import (ConfigError, _fmt, export_spectral, load_config, make_split,
                         run_experiment)
from .gram import dropout_diagonal, gram, load_matrix, precision, save_matrix
from .interactions import (DataFormatError, dataset_stats, load_interactions, load_split,
                           save_split)
from .solvers import MODELS, SolverConfig, solve

log = logging.getLogger("relaxed_lae")


def _floats(text):
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(x) for x in text.replace(",", " ").split())


def _add_data_args(p):
    p.add_argument("--data", required=True, help="interaction file: user item [rating [timestamp]]")
    p.add_argument("--format", choices=("pairs", "triples"), default="pairs")
    p.add_argument("--threshold", type=float, default=None,
                   help="drop interactions rated below this value")


def _add_eval_args(p):
    p.add_argument("--ks", type=_ints, default=(20, 100))
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--head-fraction", type=float, default=0.2)
    p.add_argument("--plain-recall", action="store_true",
                   help="divide recall by |heldout| instead of min(K, |heldout|)")
    p.add_argument("--unbiased-mode", choices=("self_normalized", "ips"), default="self_normalized")


def _eval_config(args):
    return EvalConfig(ks=args.ks, gamma=args.gamma, head_fraction=args.head_fraction,
                      truncated_recall=not args.plain_recall, unbiased_mode=args.unbiased_mode)


def cmd_ingest(args):
    X = load_interactions(args.data, args.format, args.threshold)
    stats = dataset_stats(X).as_dict()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "interactions.tsv", "w", encoding="utf-8") as fh:
            for u in range(X.num_users):
                for i in X.row(u):
                    fh.write(f"{X.user_ids[u]}\t{X.item_ids[i]}\n")
        with open(out / "stats.json", "w", encoding="utf-8") as fh:
            json.dump(stats, fh, indent=2)
    print(json.dumps(stats, indent=2))


def cmd_split(args):
    overrides = {"data": args.data, "format": args.format, "threshold": args.threshold,
                 "protocol": args.protocol, "seed": args.seed,
                 "heldout_user_fraction": args.heldout_user_fraction,
                 "foldin_fraction": args.foldin_fraction, "test_fraction": args.test_fraction}
    cfg = load_config(None, overrides)
    X = load_interactions(cfg.data, cfg.format, cfg.threshold)
    split = make_split(X, cfg)
    save_split(split, args.out)
    print(json.dumps(json.loads((Path(args.out) / "manifest.json").read_text())["counts"]))


def cmd_fit(args):
    split = load_split(args.split)
    cfg = SolverConfig(model=args.model.upper(), lam=args.lam, dropout_p=args.p, xi=args.xi)
    t0 = time.perf_counter()
    G = gram(split.train)
    out = solve(G, cfg, P=precision(G, dropout_diagonal(G, cfg.effective_p, cfg.lam)))
    elapsed = time.perf_counter() - t0
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_matrix(out_path, out.B)
    manifest = {"model": cfg.model, "lambda": cfg.lam,
                "p": cfg.effective_p, "xi": out.xi,
                "constrained_fraction": out.constrained_fraction, "wall_time_s": elapsed}
    with open(out_path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    print(json.dumps(manifest))


def cmd_eval(args):
    split = load_split(args.split)
    B = load_matrix(args.weights)
    report = evaluate_model(B, split, _eval_config(args), part=args.part)
    meta_path = Path(args.weights).with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump({**meta, "protocol": split.protocol, "part": args.part, "seed": split.seed,
                   **report.as_dict()}, fh, indent=2)
    flat = report.flat()
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        keys = ["model", "lambda", "p", "xi", "split", "seed"]
        writer.writerow(keys + list(flat))
        writer.writerow([_fmt(meta.get("model")), _fmt(meta.get("lambda")), _fmt(meta.get("p")),
                         _fmt(meta.get("xi")), f"{split.protocol}:{args.part}", split.seed]
                        + [_fmt(v) for v in flat.values()])
    print(json.dumps(flat, indent=2))


def cmd_grid(args):
    overrides = {k: getattr(args, k) for k in
                 ("data", "format", "threshold", "protocol", "seed", "models", "lambdas", "ps",
                  "xis", "ks", "gamma", "head_fraction", "selection_metric", "outdir", "run_id",
                  "workers", "max_memory_gb", "unbiased_mode")}
    if args.save_weights:
        overrides["save_weights"] = True
    if args.plain_recall:
        overrides["truncated_recall"] = False
    cfg = load_config(args.config, overrides)
    run_dir = run_experiment(cfg)
    print(run_dir)


def cmd_spectral(args):
    if args.split:
        X = load_split(args.split).train
    elif args.data:
        X = load_interactions(args.data, args.format, args.threshold)
    else:
        raise ConfigError("spectral needs --data or --split")
    for path in export_spectral(X, args.lambdas, args.out, args.group_fraction,
                                args.head_fraction, args.popular, args.unpopular, args.seed):
        print(path)


def build_parser():
    parser = argparse.ArgumentParser(prog="relaxed-lae", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse an interaction file and print dataset statistics")
    _add_data_args(p)
    p.add_argument("--out", help="directory for the normalized file and stats.json")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="write a strong or weak generalization split")
    _add_data_args(p)
    p.add_argument("--protocol", choices=("strong", "weak"), default="strong")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--heldout-user-fraction", type=float, default=0.2)
    p.add_argument("--foldin-fraction", type=float, default=0.8)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("fit", help="solve one model on a split's training matrix")
    p.add_argument("--split", required=True)
    p.add_argument("--model", required=True, type=str.upper, choices=MODELS)
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--p", type=float, default=0.0)
    p.add_argument("--xi", type=float, default=0.0)
    p.add_argument("--out", required=True, help="weight matrix file (.bin); manifest goes next to it")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="evaluate a stored weight matrix on a split")
    p.add_argument("--split", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--part", choices=("val", "test"), default="test")
    p.add_argument("--out", required=True)
    _add_eval_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="grid search over models and hyperparameters")
    p.add_argument("--config", help="key = value experiment file; flags override it")
    p.add_argument("--data")
    p.add_argument("--format", choices=("pairs", "triples"))
    p.add_argument("--threshold")
    p.add_argument("--protocol", choices=("strong", "weak"))
    p.add_argument("--seed")
    p.add_argument("--models", help="comma separated subset of " + ",".join(MODELS))
    p.add_argument("--lambdas")
    p.add_argument("--ps")
    p.add_argument("--xis")
    p.add_argument("--ks")
    p.add_argument("--gamma")
    p.add_argument("--head-fraction", dest="head_fraction")
    p.add_argument("--selection-metric", dest="selection_metric", help="e.g. ndcg@100")
    p.add_argument("--unbiased-mode", dest="unbiased_mode", choices=("self_normalized", "ips"))
    p.add_argument("--plain-recall", action="store_true")
    p.add_argument("--outdir")
    p.add_argument("--run-id", dest="run_id")
    p.add_argument("--workers")
    p.add_argument("--max-memory-gb", dest="max_memory_gb")
    p.add_argument("--save-weights", action="store_true")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("spectral", help="export eigenvalue scaling curves and PC heatmaps")
    p.add_argument("--data")
    p.add_argument("--format", choices=("pairs", "triples"), default="pairs")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--split", help="use the training matrix of a saved split")
    p.add_argument("--lambdas", type=_floats, required=True)
    p.add_argument("--group-fraction", type=float, default=0.2)
    p.add_argument("--head-fraction", type=float, default=0.2)
    p.add_argument("--popular", type=int, default=20)
    p.add_argument("--unpopular", type=int, default=80)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spectral)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, DataFormatError, MemoryError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
