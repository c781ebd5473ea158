"""Eigen-analysis of the gram matrix: how L2 strength and diagonal constraints reweight PCs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray   # descending, clamped at 0
    eigenvectors: np.ndarray  # column k pairs with eigenvalues[k]

    def reconstruct(self, indices=None):
        V = self.eigenvectors if indices is None else self.eigenvectors[:, indices]
        s = self.eigenvalues if indices is None else self.eigenvalues[indices]
        return (V * s) @ V.T


@dataclass(frozen=True)
class ScalingCurves:
    lam: float
    eigenvalues: np.ndarray
    reg_curve: np.ndarray
    constraint_curve: np.ndarray


@dataclass(frozen=True)
class PCGroupHeatmap:
    group: str
    fraction: float
    item_subset: np.ndarray
    values: np.ndarray


def eig_gram(G):
    """Symmetric eigendecomposition of ``G`` with eigenvalues sorted descending."""
    G = np.asarray(G, dtype=np.float64)
    if not np.allclose(G, G.T, rtol=0, atol=1e-12 * max(1.0, np.abs(G).max(initial=0))):
        raise ValueError("gram matrix is not symmetric")
    try:
        w, V = np.linalg.eigh(G)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"eigendecomposition did not converge: {exc}") from exc
    w = np.maximum(w[::-1], 0.0)
    V = np.ascontiguousarray(V[:, ::-1])
    return SpectralDecomposition(eigenvalues=w, eigenvectors=V)


def scaling_curves(eigenvalues, lam):
    s = np.maximum(np.asarray(eigenvalues, dtype=np.float64), 0.0)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return ScalingCurves(lam=float(lam), eigenvalues=s,
                         reg_curve=s / (s + lam), constraint_curve=1.0 / (s + lam))


def verify_lae_spectrum(B_lae, decomposition, lam):
    """Max deviation of ``B_lae`` from ``V diag(s/(s+lam)) V^T``, or from diagonal form in the PC basis."""
    V = decomposition.eigenvectors
    curves = scaling_curves(decomposition.eigenvalues, lam)
    recon = (V * curves.reg_curve) @ V.T
    residual = np.abs(B_lae - recon).max()
    D = V.T @ B_lae @ V
    off = np.abs(D - np.diag(np.diag(D))).max()
    return float(max(residual, off))


def verify_constraint_term(ease_out, lae_B, decomposition, lam):
    """Residual of ``(B_ease - B_lae) + V diag(1/(s+lam)) V^T diag(mu)``."""
    V = decomposition.eigenvectors
    curves = scaling_curves(decomposition.eigenvalues, lam)
    term = ((V * curves.constraint_curve) @ V.T) * ease_out.mu[np.newaxis, :]
    return float(np.abs(ease_out.B - lae_B + term).max())


def pc_group_size(n, fraction):
    return math.ceil(round(fraction * n, 9))


def pc_group_heatmap(decomposition, group_fraction=0.2, which="top", items=None):
    """Eigenvalue-weighted sum of the top or bottom PCs restricted to ``items``."""
    n = decomposition.eigenvalues.size
    k = pc_group_size(n, group_fraction)
    if k == 0:
        raise ValueError("PC group is empty")
    if which == "top":
        group = np.arange(min(k, n))
    elif which == "bottom":
        group = np.arange(max(n - k, 0), n)
    else:
        raise ValueError("which must be 'top' or 'bottom'")
    items = np.arange(n) if items is None else np.asarray(items, dtype=np.int64)
    if np.unique(items).size != items.size:
        raise ValueError("items must be distinct")
    if items.size and (items.min() < 0 or items.max() >= n):
        raise ValueError("item index out of range")
    V = decomposition.eigenvectors[np.ix_(items, group)]
    values = (V * decomposition.eigenvalues[group]) @ V.T
    return PCGroupHeatmap(group=which, fraction=group_fraction, item_subset=items, values=values)


def write_curves_csv(path, curves):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("rank,sigma_sq,reg_value,constraint_value\n")
        for r, (s, a, b) in enumerate(zip(curves.eigenvalues, curves.reg_curve,
                                          curves.constraint_curve), start=1):
            fh.write(f"{r},{s:.17g},{a:.17g},{b:.17g}\n")


def write_heatmap_csv(path, heatmap):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["item"] + [str(i) for i in heatmap.item_subset]) + "\n")
        for i, row in zip(heatmap.item_subset, heatmap.values):
            fh.write(",".join([str(i)] + [f"{v:.17g}" for v in row]) + "\n")
