"""Top-N scoring and Recall/NDCG under average-over-all, unbiased and head/tail views."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .interactions import StrongSplit, WeakSplit, head_tail_partition, item_popularity

PROPENSITY_FLOOR = 1e-6
VIEWS = ("aoa", "unbiased", "head", "tail")


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple = (20, 100)
    gamma: float = 2.0
    head_fraction: float = 0.2
    # denominator min(K, |heldout|) when True, |heldout| otherwise
    truncated_recall: bool = True
    # "self_normalized" or "ips"
    unbiased_mode: str = "self_normalized"

    def __post_init__(self):
        if not self.ks or any(int(k) < 1 for k in self.ks):
            raise ValueError("ks must be positive integers")
        if self.unbiased_mode not in ("self_normalized", "ips"):
            raise ValueError(f"unknown unbiased_mode {self.unbiased_mode!r}")


@dataclass(frozen=True)
class PropensityModel:
    gamma: float
    propensity: np.ndarray

    @property
    def weights(self):
        return 1.0 / self.propensity


def propensity_model(pop, gamma=2.0):
    """Propensity ``(count / max count)^((gamma + 1) / 2)``, floored at 1e-6."""
    pop = np.asarray(pop, dtype=np.float64)
    top = pop.max(initial=0.0)
    rel = pop / top if top > 0 else np.zeros_like(pop)
    prop = np.maximum(rel ** ((gamma + 1.0) / 2.0), PROPENSITY_FLOOR)
    return PropensityModel(gamma=float(gamma), propensity=prop)


@dataclass
class MetricReport:
    """``values[view][metric][K]`` plus the number of users averaged per view."""

    ks: tuple
    values: dict = field(default_factory=dict)
    user_counts: dict = field(default_factory=dict)

    def get(self, view, metric, k):
        return self.values[view][metric][k]

    def flat(self):
        out = {}
        for k in self.ks:
            for view in VIEWS:
                for metric in ("recall", "ndcg"):
                    out[f"{metric}@{k}_{view}"] = self.values[view][metric][k]
        for view in VIEWS:
            out[f"users_{view}"] = self.user_counts[view]
        return out

    def as_dict(self):
        return {
            "ks": list(self.ks),
            "metrics": {v: {m: {str(k): x for k, x in d.items()} for m, d in mv.items()}
                        for v, mv in self.values.items()},
            "user_counts": dict(self.user_counts),
        }


def predict_scores(foldin, B):
    """Sum of the weight rows of the fold-in items."""
    foldin = np.asarray(list(foldin), dtype=np.int64)
    if foldin.size == 0:
        return np.zeros(B.shape[1])
    return B[foldin].sum(axis=0)


def topn(scores, foldin, N):
    """Indices of the ``N`` best non-fold-in items, ties resolved toward the lower index."""
    scores = np.array(scores, dtype=np.float64)
    foldin = np.asarray(list(foldin), dtype=np.int64)
    scores[foldin] = -np.inf
    available = scores.size - np.unique(foldin).size
    N = min(N, available)
    if N <= 0:
        return np.zeros(0, dtype=np.int64)
    if N < available:
        cut = np.partition(scores, scores.size - N)[scores.size - N]
        candidates = np.flatnonzero(scores >= cut)
    else:
        candidates = np.flatnonzero(scores > -np.inf)
    order = np.argsort(-scores[candidates], kind="stable")
    return candidates[order[:N]]


def _discounts(K):
    return 1.0 / np.log2(np.arange(2, K + 2))


def _hits(ranking, heldout, K):
    heldout = np.asarray(list(heldout), dtype=np.int64)
    top = np.asarray(ranking[:K], dtype=np.int64)
    return top, np.isin(top, heldout)


def recall_at_k(ranking, heldout, K, truncated=True):
    heldout = set(int(i) for i in heldout)
    if not heldout:
        return None
    _, hit = _hits(ranking, heldout, K)
    denom = min(K, len(heldout)) if truncated else len(heldout)
    return float(hit.sum()) / denom


def ndcg_at_k(ranking, heldout, K):
    heldout = set(int(i) for i in heldout)
    if not heldout:
        return None
    _, hit = _hits(ranking, heldout, K)
    disc = _discounts(K)
    dcg = math.fsum(disc[: hit.size][hit])
    idcg = math.fsum(disc[: min(K, len(heldout))])
    return dcg / idcg


def unbiased_metrics(ranking, heldout, propensity, K, truncated=True, mode="self_normalized"):
    """Inverse-propensity weighted (recall, ndcg).

    Self-normalized: each hit counts ``1/propensity`` and the denominator is
    the best attainable weighted score. ``ips``: weights are rescaled to
    mean 1 over the held-out items and the ordinary ideal is used, so the
    value can exceed 1.
    """
    held = np.asarray(sorted(set(int(i) for i in heldout)), dtype=np.int64)
    if held.size == 0:
        return None, None
    prop = propensity.propensity if isinstance(propensity, PropensityModel) else np.asarray(propensity)
    w = 1.0 / np.maximum(prop, PROPENSITY_FLOOR)
    top, hit = _hits(ranking, held, K)
    hit_w = w[top[hit]]
    disc = _discounts(K)
    hit_disc = disc[: hit.size][hit]
    cutoff = min(K, held.size)
    if mode == "self_normalized":
        ideal = np.sort(w[held])[::-1]
        recall_denom = math.fsum(ideal[:cutoff] if truncated else ideal)
        idcg = math.fsum(ideal[:cutoff] * disc[:cutoff])
        return (math.fsum(hit_w) / recall_denom, math.fsum(hit_w * hit_disc) / idcg)
    if mode == "ips":
        scale = held.size / math.fsum(w[held])
        recall_denom = cutoff if truncated else held.size
        idcg = math.fsum(disc[:cutoff])
        return (scale * math.fsum(hit_w) / recall_denom,
                scale * math.fsum(hit_w * hit_disc) / idcg)
    raise ValueError(f"unknown mode {mode!r}")


def group_metrics(ranking, heldout, partition, K, truncated=True):
    """AOA metrics with the held-out set restricted to head and to tail items."""
    heldout = set(int(i) for i in heldout)
    head = set(int(i) for i in partition.head)
    head_held = heldout & head
    tail_held = heldout - head
    return {
        "head": (recall_at_k(ranking, head_held, K, truncated), ndcg_at_k(ranking, head_held, K)),
        "tail": (recall_at_k(ranking, tail_held, K, truncated), ndcg_at_k(ranking, tail_held, K)),
    }


def _rankings(B, foldin, max_k, batch=1024):
    csr = foldin.to_csr()
    for start in range(0, foldin.num_users, batch):
        stop = min(start + batch, foldin.num_users)
        scores = np.asarray(csr[start:stop] @ B)
        for r in range(stop - start):
            u = start + r
            yield u, topn(scores[r], foldin.row(u), max_k)


def evaluate_rankings(B, foldin, heldout, train_pop, config=EvalConfig()):
    """Score every user of ``foldin`` with ``B`` and average metrics over users with held-out items."""
    if foldin.num_users != heldout.num_users:
        raise ValueError("fold-in and held-out matrices must have the same users")
    ks = tuple(sorted(int(k) for k in config.ks))
    prop = propensity_model(train_pop, config.gamma)
    partition = head_tail_partition(train_pop, config.head_fraction)
    head_mask = partition.head_mask(foldin.num_items)
    acc = {v: {m: {k: [] for k in ks} for m in ("recall", "ndcg")} for v in VIEWS}
    counts = dict.fromkeys(VIEWS, 0)
    for u, ranking in _rankings(B, foldin, max(ks)):
        held = heldout.row(u)
        if held.size == 0:
            continue
        head_held = held[head_mask[held]]
        tail_held = held[~head_mask[held]]
        counts["aoa"] += 1
        counts["unbiased"] += 1
        has_head, has_tail = head_held.size > 0, tail_held.size > 0
        counts["head"] += has_head
        counts["tail"] += has_tail
        for k in ks:
            acc["aoa"]["recall"][k].append(recall_at_k(ranking, held, k, config.truncated_recall))
            acc["aoa"]["ndcg"][k].append(ndcg_at_k(ranking, held, k))
            r_u, n_u = unbiased_metrics(ranking, held, prop, k, config.truncated_recall,
                                        config.unbiased_mode)
            acc["unbiased"]["recall"][k].append(r_u)
            acc["unbiased"]["ndcg"][k].append(n_u)
            for view, subset, present in (("head", head_held, has_head), ("tail", tail_held, has_tail)):
                if present:
                    acc[view]["recall"][k].append(recall_at_k(ranking, subset, k, config.truncated_recall))
                    acc[view]["ndcg"][k].append(ndcg_at_k(ranking, subset, k))
    values = {v: {m: {k: (math.fsum(xs) / len(xs) if xs else float("nan"))
                      for k, xs in per_k.items()}
                  for m, per_k in mv.items()}
              for v, mv in acc.items()}
    return MetricReport(ks=ks, values=values, user_counts=counts)


def evaluate_model(B, split, config=EvalConfig(), part="test"):
    """Metrics of ``B`` on a strong split (``part`` = "val" or "test") or on a weak split."""
    train_pop = item_popularity(split.train)
    if isinstance(split, StrongSplit):
        if part not in ("val", "test"):
            raise ValueError("part must be 'val' or 'test'")
        foldin = getattr(split, f"{part}_foldin")
        heldout = getattr(split, f"{part}_heldout")
    elif isinstance(split, WeakSplit):
        foldin, heldout = split.train, split.test
    else:
        raise TypeError(f"unsupported split type {type(split).__name__}")
    return evaluate_rankings(B, foldin, heldout, train_pop, config)
