"""Gram matrix, dropout-derived regularization diagonal and precision matrix.

Dense matrices are float64 and need ``8 * n**2`` bytes each.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    def __init__(self, pivot):
        super().__init__(f"regularized gram matrix is not positive definite "
                         f"(Cholesky failed at pivot index {pivot})")
        self.pivot = pivot


def gram(X):
    """Dense item co-occurrence counts ``X^T X``."""
    csr = X.to_csr()
    return np.asarray((csr.T @ csr).toarray(), dtype=np.float64)


@dataclass(frozen=True)
class RegDiagonal:
    """Per-item L2 strengths ``p/(1-p) * G_jj + lambda``."""

    values: np.ndarray
    lam: float
    dropout_p: float = 0.0


def dropout_diagonal(G, p, lam):
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    values = (p / (1.0 - p)) * np.diag(G) + lam
    values.setflags(write=False)
    return RegDiagonal(values=values, lam=float(lam), dropout_p=float(p))


def l2_diagonal(n, lam):
    return dropout_diagonal(np.zeros((n, n)), 0.0, lam)


def precision(G, reg):
    """Inverse of ``G + diag(reg)`` through a Cholesky factorization."""
    values = reg.values if isinstance(reg, RegDiagonal) else np.asarray(reg, dtype=np.float64)
    if np.any(values <= 0):
        raise ValueError("regularization entries must be positive")
    A = np.array(G, dtype=np.float64, order="F", copy=True)
    A[np.diag_indices_from(A)] += values
    c, info = lapack.dpotrf(A, lower=False, overwrite_a=True, clean=False)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    P, info = lapack.dpotri(c, lower=False, overwrite_c=True)
    if info != 0:
        raise NotPositiveDefiniteError(info - 1)
    # dpotri fills the upper triangle only
    P = np.triu(P)
    P = P + np.triu(P, 1).T
    return np.ascontiguousarray(P)


# --- binary container --------------------------------------------------------
#
# header: 8-byte magic, uint64 n, 8-byte dtype tag; then n*n little-endian
# float64 values in row-major order.

MAGIC = b"LAEMAT\x00\x01"
_DTYPE_TAG = b"f8\x00\x00\x00\x00\x00\x00"
_HEADER = struct.Struct("<8sQ8s")


def save_matrix(path, M):
    M = np.asarray(M, dtype="<f8")
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("only square matrices are stored")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, M.shape[0], _DTYPE_TAG))
        fh.write(np.ascontiguousarray(M).tobytes(order="C"))


def load_matrix(path):
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, n, tag = _HEADER.unpack(header)
        if magic != MAGIC or tag != _DTYPE_TAG:
            raise ValueError(f"{path}: not a matrix container")
        payload = fh.read()
    if len(payload) != 8 * n * n:
        raise ValueError(f"{path}: expected {8 * n * n} payload bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(n, n).astype(np.float64)


def export_csv(path, M):
    np.savetxt(path, M, delimiter=",", fmt="%.17g")
