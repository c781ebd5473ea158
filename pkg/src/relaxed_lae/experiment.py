"""Grid-search runner and spectral export behind the ``grid`` and ``spectral`` subcommands."""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .evaluation import EvalConfig, evaluate_model
from .gram import dropout_diagonal, gram, precision, save_matrix
from .interactions import (dataset_stats, head_tail_partition, item_popularity,
                           load_interactions, strong_split, weak_split)
from .solvers import DROPOUT_MODELS, MODELS, RELAXED_MODELS, SolverConfig, solve
from .spectral import (eig_gram, pc_group_heatmap, scaling_curves, write_curves_csv,
                       write_heatmap_csv)

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 20)
DEFAULT_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
# G, P and B live in memory at once for every concurrent (lambda, p) group
MATRICES_PER_WORKER = 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    data: str = ""
    format: str = "pairs"
    threshold: float | None = None
    protocol: str = "strong"
    seed: int = 0
    models: tuple = MODELS
    lambdas: tuple = DEFAULT_LAMBDAS
    ps: tuple = DEFAULT_FRACTIONS
    xis: tuple = DEFAULT_FRACTIONS
    ks: tuple = (20, 100)
    gamma: float = 2.0
    head_fraction: float = 0.2
    heldout_user_fraction: float = 0.2
    foldin_fraction: float = 0.8
    test_fraction: float = 0.2
    truncated_recall: bool = True
    unbiased_mode: str = "self_normalized"
    # "" picks ndcg@100 on validation (strong) or ndcg@20 on test (weak)
    selection_metric: str = ""
    outdir: str = "runs"
    run_id: str = ""
    workers: int = 1
    max_memory_gb: float = 16.0
    save_weights: bool = False

    def validate(self):
        if not self.data:
            raise ConfigError("no data path given")
        if self.protocol not in ("strong", "weak"):
            raise ConfigError(f"protocol must be strong or weak, got {self.protocol!r}")
        unknown = [m for m in self.models if m not in MODELS]
        if not self.models or unknown:
            raise ConfigError(f"invalid model list {list(self.models)}")
        if not self.lambdas or any(lam <= 0 for lam in self.lambdas):
            raise ConfigError("lambda grid must be non-empty and positive")
        if any(m in DROPOUT_MODELS for m in self.models):
            if not self.ps or any(not 0 <= p < 1 for p in self.ps):
                raise ConfigError("dropout grid must be non-empty within [0, 1)")
        if any(m in RELAXED_MODELS for m in self.models):
            if not self.xis or any(x < 0 for x in self.xis):
                raise ConfigError("xi grid must be non-empty and non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.eval_config()
        return self

    def eval_config(self):
        try:
            return EvalConfig(ks=tuple(self.ks), gamma=self.gamma, head_fraction=self.head_fraction,
                              truncated_recall=self.truncated_recall,
                              unbiased_mode=self.unbiased_mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def selection(self):
        """(part, view, metric, k) used to pick the best grid point per model."""
        if self.selection_metric:
            metric, k = self.selection_metric.split("@")
            k = int(k)
        else:
            metric, k = "ndcg", 100 if self.protocol == "strong" else 20
        if k not in self.ks:
            raise ConfigError(f"selection cutoff {k} not among ks {list(self.ks)}")
        return ("val" if self.protocol == "strong" else "test"), "aoa", metric, k

    def digest(self):
        payload = {k: v for k, v in asdict(self).items() if k not in ("outdir", "run_id", "workers")}
        return hashlib.sha1(json.dumps(payload, sort_keys=True, default=list).encode()).hexdigest()[:12]


_LIST_FIELDS = {"models": str, "lambdas": float, "ps": float, "xis": float, "ks": int}
_BOOL_FIELDS = {"truncated_recall", "save_weights"}


def _coerce(name, value, current):
    if isinstance(value, str):
        value = value.strip()
    if name in _LIST_FIELDS:
        items = value.replace(",", " ").split() if isinstance(value, str) else value
        kind = _LIST_FIELDS[name]
        return tuple(kind(x.upper() if kind is str else x) for x in items)
    if name in _BOOL_FIELDS:
        return value if isinstance(value, bool) else value.lower() in ("1", "true", "yes", "on")
    if name == "threshold":
        return None if value in (None, "", "none") else float(value)
    if isinstance(current, bool):
        return bool(value)
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def load_config(path=None, overrides=None):
    """Read ``key = value`` lines (``#`` comments allowed) and apply overrides."""
    cfg = ExperimentConfig()
    names = {f.name for f in fields(ExperimentConfig)}
    settings = {}
    if path:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        with open(path, encoding="utf-8") as fh:
            parser.read_string("[experiment]\n" + fh.read())
        settings.update(parser["experiment"])
    settings.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key, value in settings.items():
        name = key.replace("-", "_")
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            setattr(cfg, name, _coerce(name, value, getattr(cfg, name)))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return cfg


def required_memory_bytes(n, workers=1):
    return MATRICES_PER_WORKER * workers * 8 * n * n


def check_memory(n, config):
    need = required_memory_bytes(n, config.workers)
    limit = config.max_memory_gb * 1024 ** 3
    if need > limit:
        raise MemoryError(f"{n} items need about {need / 1024 ** 3:.1f} GiB of dense matrices "
                          f"with {config.workers} worker(s); limit is {config.max_memory_gb} GiB "
                          f"(raise max_memory_gb or reduce workers)")
    return need


def grid_points(config):
    """Grid points grouped by the (lambda, p) pair whose precision matrix they share."""
    groups = {}
    for model in config.models:
        ps = config.ps if model in DROPOUT_MODELS else (0.0,)
        xis = config.xis if model in RELAXED_MODELS else (None,)
        for lam in config.lambdas:
            for p in ps:
                for xi in xis:
                    groups.setdefault((float(lam), float(p)), []).append((model, xi))
    return groups


def make_split(X, config):
    if config.protocol == "strong":
        return strong_split(X, config.heldout_user_fraction, config.foldin_fraction, config.seed)
    return weak_split(X, config.test_fraction, config.seed)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def run_grid(split, config, G=None):
    """Fit and evaluate every grid point on ``split``.

    Returns (rows, best, stats) where ``stats["factorizations"]`` counts
    precision matrices computed.
    """
    eval_cfg = config.eval_config()
    part, view, metric, k = config.selection()
    if G is None:
        G = gram(split.train)
    groups = grid_points(config)

    def run_group(key):
        lam, p = key
        t0 = time.perf_counter()
        reg = dropout_diagonal(G, p, lam)
        P = precision(G, reg)
        factor_time = time.perf_counter() - t0
        results = []
        for model, xi in groups[key]:
            t1 = time.perf_counter()
            cfg = SolverConfig(model=model, lam=lam, dropout_p=p, xi=0.0 if xi is None else xi)
            out = solve(G, cfg, P=P)
            fit_time = time.perf_counter() - t1
            test = evaluate_model(out.B, split, eval_cfg, part="test")
            sel = test if part == "test" else evaluate_model(out.B, split, eval_cfg, part=part)
            results.append({
                "model": model, "lambda": lam,
                "p": p if model in DROPOUT_MODELS else None,
                "xi": xi, "constrained_fraction": out.constrained_fraction,
                "selection": sel.get(view, metric, k), "report": test,
                "weights": out.B if config.save_weights else None,
                "timing": {"factorization_s": factor_time, "fit_s": fit_time,
                           "total_s": time.perf_counter() - t1},
            })
        log.info("lambda=%g p=%g: %d grid points", lam, p, len(results))
        return results

    keys = sorted(groups)
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            batches = list(pool.map(run_group, keys))
    else:
        batches = [run_group(key) for key in keys]
    order = {m: i for i, m in enumerate(MODELS)}
    rows = sorted((r for batch in batches for r in batch),
                  key=lambda r: (order[r["model"]], r["lambda"], r["p"] or 0.0, r["xi"] or 0.0))
    best = {}
    for r in rows:
        cur = best.get(r["model"])
        if cur is None or r["selection"] > cur["selection"]:
            best[r["model"]] = r
    return rows, best, {"factorizations": len(keys)}


def write_report(path, rows, config):
    part, view, metric, k = config.selection()
    sel_name = f"{part}_{metric}@{k}_{view}"
    metric_cols = list(rows[0]["report"].flat()) if rows else []
    header = ["model", "lambda", "p", "xi", "protocol", "seed", "constrained_fraction",
              sel_name] + metric_cols
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in rows:
            flat = r["report"].flat()
            writer.writerow([r["model"], _fmt(r["lambda"]), _fmt(r["p"]), _fmt(r["xi"]),
                             config.protocol, config.seed, _fmt(r["constrained_fraction"]),
                             _fmt(r["selection"])] + [_fmt(flat[c]) for c in metric_cols])


def _solver_manifest(r):
    return {"model": r["model"], "lambda": r["lambda"], "p": r["p"], "xi": r["xi"],
            "constrained_fraction": r["constrained_fraction"], "wall_time_s": r["timing"]["total_s"]}


def run_experiment(config):
    """Ingest, split, grid-search and write ``report.csv`` + ``manifest.json``; returns the run directory."""
    config.validate()
    started = time.perf_counter()
    X = load_interactions(config.data, config.format, config.threshold)
    check_memory(X.num_items, config)
    split = make_split(X, config)
    G = gram(split.train)
    rows, best, stats = run_grid(split, config, G=G)

    run_dir = Path(config.outdir) / (config.run_id or config.digest())
    run_dir.mkdir(parents=True, exist_ok=True)
    write_report(run_dir / "report.csv", rows, config)
    if config.save_weights:
        for model, r in best.items():
            save_matrix(run_dir / f"{model}_best.bin", r["weights"])
            with open(run_dir / f"{model}_best.json", "w", encoding="utf-8") as fh:
                json.dump(_solver_manifest(r), fh, indent=2)
    part, view, metric, k = config.selection()
    manifest = {
        "config": asdict(config),
        "seed": config.seed,
        "selection": {"part": part, "view": view, "metric": f"{metric}@{k}"},
        "dataset": dataset_stats(X).as_dict(),
        "split_counts": _split_counts(split),
        "factorizations": stats["factorizations"],
        "grid_points": len(rows),
        "best": {m: {**_solver_manifest(r), "selection_value": r["selection"],
                     "test": r["report"].as_dict()} for m, r in best.items()},
        "versions": {"relaxed_lae": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "timing": {"grid": [{"model": r["model"], "lambda": r["lambda"], "p": r["p"],
                             "xi": r["xi"], **r["timing"]} for r in rows],
                   "total_s": time.perf_counter() - started},
    }
    with open(run_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=_json_default)
    return run_dir


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (tuple, np.ndarray)):
        return list(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _split_counts(split):
    if split.protocol == "strong":
        return {p: getattr(split, p).nnz
                for p in ("train", "val_foldin", "val_heldout", "test_foldin", "test_heldout")}
    return {"train": split.train.nnz, "test": split.test.nnz}


def sample_items(pop, head_fraction=0.2, n_popular=20, n_unpopular=80, seed=0):
    """Uniform draw of popular (head) and unpopular (tail) items, returned most popular first."""
    rng = np.random.default_rng(seed)
    part = head_tail_partition(pop, head_fraction)
    popular = rng.choice(part.head, size=min(n_popular, part.head.size), replace=False)
    unpopular = rng.choice(part.tail, size=min(n_unpopular, part.tail.size), replace=False)
    items = np.concatenate([popular, unpopular]).astype(np.int64)
    pop = np.asarray(pop)
    return items[np.lexsort((items, -pop[items]))]


def export_spectral(X, lambdas, outdir, group_fraction=0.2, head_fraction=0.2,
                    n_popular=20, n_unpopular=80, seed=0):
    """Write per-lambda scaling curves and top/bottom PC heatmaps; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    G = gram(X)
    dec = eig_gram(G)
    written = []
    for lam in lambdas:
        path = outdir / f"curves_lambda_{_fmt(float(lam))}.csv"
        write_curves_csv(path, scaling_curves(dec.eigenvalues, lam))
        written.append(path)
    items = sample_items(item_popularity(X), head_fraction, n_popular, n_unpopular, seed)
    for which in ("top", "bottom"):
        path = outdir / f"heatmap_{which}.csv"
        write_heatmap_csv(path, pc_group_heatmap(dec, group_fraction, which, items))
        written.append(path)
    with open(outdir / "spectral_manifest.json", "w", encoding="utf-8") as fh:
        json.dump({"lambdas": [float(x) for x in lambdas], "group_fraction": group_fraction,
                   "seed": seed, "items": items.tolist(), "num_items": X.num_items}, fh, indent=2)
    return written
