"""Implicit-feedback ingestion, train/test splitting and popularity statistics."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class DataFormatError(ValueError):
    """Raised for malformed or empty interaction files."""


@dataclass(frozen=True)
class InteractionMatrix:
    """Binary user x item matrix stored as CSR adjacency.

    Row ``u`` holds the strictly increasing item indices of user ``u``.
    ``user_ids``/``item_ids`` keep the external identifiers when the
    matrix came from a file; they are empty for synthetic data.
    """

    num_users: int
    num_items: int
    indptr: np.ndarray
    indices: np.ndarray
    user_ids: tuple = ()
    item_ids: tuple = ()

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        if indptr.shape != (self.num_users + 1,) or indptr[0] != 0:
            raise ValueError("indptr does not match num_users")
        if indptr[-1] != indices.size or np.any(np.diff(indptr) < 0):
            raise ValueError("indptr is not a valid offset array")
        if indices.size and (indices.min() < 0 or indices.max() >= self.num_items):
            raise ValueError("item index out of range")
        if indices.size > 1:
            within_row = np.ones(indices.size - 1, dtype=bool)
            ends = indptr[1:-1] - 1
            within_row[ends[(ends >= 0) & (ends < indices.size - 1)]] = False
            bad = np.flatnonzero(within_row & (np.diff(indices) <= 0))
            if bad.size:
                u = int(np.searchsorted(indptr, bad[0], side="right") - 1)
                raise ValueError(f"row {u} is not strictly increasing")
        indptr.setflags(write=False)
        indices.setflags(write=False)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)

    @classmethod
    def from_rows(cls, rows, num_items, user_ids=(), item_ids=()):
        """Build from an iterable of per-user item collections (duplicates collapse)."""
        cleaned = [np.unique(np.asarray(list(r), dtype=np.int64)) for r in rows]
        indptr = np.zeros(len(cleaned) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([r.size for r in cleaned])
        indices = np.concatenate(cleaned) if cleaned else np.zeros(0, dtype=np.int64)
        return cls(len(cleaned), int(num_items), indptr, indices,
                   tuple(user_ids), tuple(item_ids))

    @classmethod
    def from_csr(cls, mat, user_ids=(), item_ids=()):
        mat = sp.csr_matrix(mat, copy=True)
        mat.sum_duplicates()
        mat.eliminate_zeros()
        mat.sort_indices()
        return cls(mat.shape[0], mat.shape[1], mat.indptr, mat.indices,
                   tuple(user_ids), tuple(item_ids))

    @property
    def nnz(self):
        return int(self.indices.size)

    @property
    def shape(self):
        return (self.num_users, self.num_items)

    def row(self, u):
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def rows(self):
        return [self.row(u) for u in range(self.num_users)]

    def row_lengths(self):
        return np.diff(self.indptr)

    def to_csr(self, dtype=np.float64):
        data = np.ones(self.nnz, dtype=dtype)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)

    def pairs(self):
        """Set of (user, item) index pairs."""
        users = np.repeat(np.arange(self.num_users), self.row_lengths())
        return set(zip(users.tolist(), self.indices.tolist()))


@dataclass(frozen=True)
class StrongSplit:
    """Disjoint user sets; held-out users are further split into fold-in/held-out items.

    ``*_users`` map the rows of each part back to row indices of the
    source matrix.
    """

    train: InteractionMatrix
    val_foldin: InteractionMatrix
    val_heldout: InteractionMatrix
    test_foldin: InteractionMatrix
    test_heldout: InteractionMatrix
    train_users: np.ndarray
    val_users: np.ndarray
    test_users: np.ndarray
    seed: int = 0
    params: dict = field(default_factory=dict)

    protocol = "strong"


@dataclass(frozen=True)
class WeakSplit:
    train: InteractionMatrix
    test: InteractionMatrix
    seed: int = 0
    params: dict = field(default_factory=dict)

    protocol = "weak"


@dataclass(frozen=True)
class ItemPartition:
    head: np.ndarray
    tail: np.ndarray

    def head_mask(self, num_items):
        mask = np.zeros(num_items, dtype=bool)
        mask[self.head] = True
        return mask


@dataclass(frozen=True)
class DatasetStats:
    num_users: int
    num_items: int
    num_ratings: int
    density: float
    gini_item: float

    def as_dict(self):
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "num_ratings": self.num_ratings,
            "density": self.density,
            "gini_item": self.gini_item,
        }


_SEPARATORS = {",": re.compile(r"\s*,\s*"), "\t": re.compile(r"\t"), " ": re.compile(r" +")}


def _detect_separator(line):
    for sep in (",", "\t"):
        if sep in line:
            return sep
    return " "


def load_interactions(path, format="pairs", binarize_threshold=None):
    """Read ``user item [rating [timestamp]]`` lines into an :class:`InteractionMatrix`.

    Ids are remapped densely in order of first occurrence. With a
    threshold, lines whose rating is below it are dropped; repeated pairs
    count once.
    """
    if format not in ("pairs", "triples"):
        raise ValueError(f"unknown format {format!r}")
    min_cols = 3 if format == "triples" or binarize_threshold is not None else 2
    user_index, item_index = {}, {}
    rows = []
    splitter = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if splitter is None:
                splitter = _SEPARATORS[_detect_separator(line)]
            cols = splitter.split(line)
            if len(cols) < min_cols or len(cols) > 4 or not all(cols[:min_cols]):
                raise DataFormatError(f"{path}:{lineno}: expected {min_cols}-4 columns, got {line!r}")
            if binarize_threshold is not None:
                try:
                    rating = float(cols[2])
                except ValueError:
                    raise DataFormatError(f"{path}:{lineno}: bad rating {cols[2]!r}") from None
                if rating < binarize_threshold:
                    continue
            u = user_index.setdefault(cols[0], len(user_index))
            i = item_index.setdefault(cols[1], len(item_index))
            if u == len(rows):
                rows.append(set())
            rows[u].add(i)
    if not rows:
        raise DataFormatError(f"{path}: no interactions")
    return InteractionMatrix.from_rows(rows, len(item_index),
                                       user_ids=user_index.keys(), item_ids=item_index.keys())


def _round_half_up(x):
    return int(math.floor(x + 0.5 + 1e-9))


def _subset(X, users):
    return InteractionMatrix.from_rows([X.row(u) for u in users], X.num_items, item_ids=X.item_ids)


def strong_split(X, heldout_user_fraction=0.2, foldin_fraction=0.8, seed=0):
    """Split users into train / validation / test; held-out users get fold-in items.

    Users with a single item land entirely in fold-in and so have no
    held-out item to score.
    """
    m = X.num_users
    if m < 5:
        raise ValueError("strong split needs at least 5 users")
    if not 0 < heldout_user_fraction < 1 or not 0 < foldin_fraction < 1:
        raise ValueError("fractions must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    n_heldout = max(2, _round_half_up(heldout_user_fraction * m))
    n_val = n_heldout // 2
    train_users = np.sort(perm[: m - n_heldout])
    val_users = np.sort(perm[m - n_heldout: m - n_heldout + n_val])
    test_users = np.sort(perm[m - n_heldout + n_val:])

    def fold(users):
        foldin, heldout = [], []
        for u in users:
            items = X.row(u)
            k = items.size
            if k < 2:
                foldin.append(items)
                heldout.append(items[:0])
                continue
            n_in = min(max(_round_half_up(foldin_fraction * k), 1), k - 1)
            chosen = np.zeros(k, dtype=bool)
            chosen[rng.permutation(k)[:n_in]] = True
            foldin.append(items[chosen])
            heldout.append(items[~chosen])
        return (InteractionMatrix.from_rows(foldin, X.num_items, item_ids=X.item_ids),
                InteractionMatrix.from_rows(heldout, X.num_items, item_ids=X.item_ids))

    val_in, val_out = fold(val_users)
    test_in, test_out = fold(test_users)
    params = {"heldout_user_fraction": heldout_user_fraction, "foldin_fraction": foldin_fraction}
    return StrongSplit(_subset(X, train_users), val_in, val_out, test_in, test_out,
                       train_users, val_users, test_users, seed=seed, params=params)


def weak_split(X, test_fraction=0.2, seed=0):
    """Per-user random hold-out of ``test_fraction`` of each user's interactions."""
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for u in range(X.num_users):
        items = X.row(u)
        k = items.size
        n_test = _round_half_up(test_fraction * k)
        picked = np.zeros(k, dtype=bool)
        if n_test:
            picked[rng.permutation(k)[:n_test]] = True
        train.append(items[~picked])
        test.append(items[picked])
    return WeakSplit(InteractionMatrix.from_rows(train, X.num_items, X.user_ids, X.item_ids),
                     InteractionMatrix.from_rows(test, X.num_items, X.user_ids, X.item_ids),
                     seed=seed, params={"test_fraction": test_fraction})


def item_popularity(X):
    return np.bincount(X.indices, minlength=X.num_items).astype(np.int64)


def gini_index(pop):
    """Gini coefficient of a count vector (0 for a uniform distribution)."""
    x = np.sort(np.asarray(pop, dtype=np.float64))
    if x.size == 0 or x.sum() <= 0:
        raise ValueError("gini_index needs at least one positive count")
    if np.any(x < 0):
        raise ValueError("counts must be non-negative")
    n = x.size
    coef = 2.0 * np.arange(1, n + 1) - n - 1
    return float(np.dot(coef, x) / (n * x.sum()))


def head_tail_partition(pop, head_fraction=0.2):
    """Top ``ceil(head_fraction * n)`` items by count are head; ties go to the lower index."""
    pop = np.asarray(pop)
    n = pop.size
    if not 0 <= head_fraction <= 1:
        raise ValueError("head_fraction must lie in [0, 1]")
    k = math.ceil(round(head_fraction * n, 9))
    order = np.lexsort((np.arange(n), -pop))
    return ItemPartition(head=np.sort(order[:k]), tail=np.sort(order[k:]))


def dataset_stats(X):
    pop = item_popularity(X)
    return DatasetStats(
        num_users=X.num_users,
        num_items=X.num_items,
        num_ratings=X.nnz,
        density=X.nnz / (X.num_users * X.num_items),
        gini_item=gini_index(pop),
    )


# --- serialization ---------------------------------------------------------

def write_interactions(path, X, user_offset=None):
    """Write ``user<TAB>item`` index lines. ``user_offset`` maps rows to global user indices."""
    users = np.arange(X.num_users) if user_offset is None else np.asarray(user_offset)
    with open(path, "w", encoding="utf-8") as fh:
        for r in range(X.num_users):
            for i in X.row(r):
                fh.write(f"{users[r]}\t{i}\n")


def _read_indexed(path, users, num_items):
    pos = {int(u): k for k, u in enumerate(users)}
    rows = [[] for _ in users]
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                u, i = (int(c) for c in line.split("\t"))
                rows[pos[u]].append(i)
            except (ValueError, KeyError):
                raise DataFormatError(f"{path}:{lineno}: bad split line {line!r}") from None
    return InteractionMatrix.from_rows(rows, num_items)


_STRONG_PARTS = ("train", "val_foldin", "val_heldout", "test_foldin", "test_heldout")


def save_split(split, directory):
    """Write split parts as index TSV files plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"protocol": split.protocol, "seed": split.seed, **split.params}
    if isinstance(split, StrongSplit):
        user_map = {"train": split.train_users, "val": split.val_users, "test": split.test_users}
        for part in _STRONG_PARTS:
            write_interactions(directory / f"{part}.tsv", getattr(split, part),
                               user_map[part.split("_")[0]])
        manifest["num_items"] = split.train.num_items
        manifest["users"] = {k: v.tolist() for k, v in user_map.items()}
        manifest["counts"] = {p: getattr(split, p).nnz for p in _STRONG_PARTS}
    else:
        write_interactions(directory / "train.tsv", split.train)
        write_interactions(directory / "test.tsv", split.test)
        manifest["num_items"] = split.train.num_items
        manifest["num_users"] = split.train.num_users
        manifest["counts"] = {"train": split.train.nnz, "test": split.test.nnz}
    manifest["item_ids"] = list(split.train.item_ids)
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def load_split(directory):
    directory = Path(directory)
    with open(directory / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    n = manifest["num_items"]
    seed = manifest["seed"]
    if manifest["protocol"] == "strong":
        users = {k: np.asarray(v, dtype=np.int64) for k, v in manifest["users"].items()}
        parts = {p: _read_indexed(directory / f"{p}.tsv", users[p.split("_")[0]], n)
                 for p in _STRONG_PARTS}
        params = {k: manifest[k] for k in ("heldout_user_fraction", "foldin_fraction")}
        return StrongSplit(**parts, train_users=users["train"], val_users=users["val"],
                           test_users=users["test"], seed=seed, params=params)
    users = np.arange(manifest["num_users"])
    return WeakSplit(_read_indexed(directory / "train.tsv", users, n),
                     _read_indexed(directory / "test.tsv", users, n),
                     seed=seed, params={"test_fraction": manifest["test_fraction"]})
