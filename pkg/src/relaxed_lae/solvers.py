"""Closed-form linear autoencoders: LAE, EASE, DLAE, EDLAE and the relaxed RLAE/RDLAE.

Every model is ``B = I - P @ diag(Lambda + mu)`` for a precision matrix
``P = (G + diag(Lambda))^-1``; the models only differ in ``Lambda`` and in
how the multipliers ``mu`` are chosen. Once ``P`` is known, changing the
diagonal threshold ``xi`` is an O(n^2) column rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gram import RegDiagonal, dropout_diagonal, precision

MODELS = ("LAE", "EASE", "DLAE", "EDLAE", "RLAE", "RDLAE")
DROPOUT_MODELS = ("DLAE", "EDLAE", "RDLAE")
RELAXED_MODELS = ("RLAE", "RDLAE")


@dataclass(frozen=True)
class SolverConfig:
    model: str
    lam: float
    dropout_p: float = 0.0
    xi: float = 0.0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must lie in [0, 1)")
        if not self.xi >= 0:
            raise ValueError("xi must be non-negative")

    @property
    def effective_p(self):
        return self.dropout_p if self.model in DROPOUT_MODELS else 0.0


@dataclass
class SolverOutput:
    B: np.ndarray
    mu: np.ndarray
    constrained: np.ndarray
    model: str = ""
    lam: float = float("nan")
    dropout_p: float = 0.0
    xi: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def constrained_fraction(self):
        return float(self.constrained.mean()) if self.constrained.size else 0.0


def constrained_mask(P, reg_diag, xi):
    """Items whose diagonal constraint is active, i.e. ``1 - P_jj * Lambda_jj > xi``.

    ``P`` may be the full precision matrix or just its diagonal.
    """
    P = np.asarray(P)
    d = np.diag(P) if P.ndim == 2 else P
    reg = reg_diag.values if isinstance(reg_diag, RegDiagonal) else np.asarray(reg_diag)
    mask = 1.0 - d * reg > xi
    return mask, float(mask.mean()) if mask.size else 0.0


def _weights(P, scale):
    B = P * -scale[np.newaxis, :]
    B[np.diag_indices_from(B)] += 1.0
    return B


def from_precision(P, reg, xi=None, equality=False):
    """Weights for a given precision matrix.

    ``xi=None`` gives the unconstrained solution, ``equality=True`` the
    zero-diagonal one and a number the inequality-constrained one.
    """
    lam_vec = reg.values if isinstance(reg, RegDiagonal) else np.asarray(reg, dtype=np.float64)
    d = np.diag(P)
    if equality:
        scale = 1.0 / d
        mu = scale - lam_vec
        # P_jj * Lambda_jj <= 1, so mu is non-negative up to rounding
        if np.any(mu < -1e-9 * np.maximum(scale, 1.0)):
            raise ArithmeticError("negative multiplier for an equality-constrained item")
        mu = np.maximum(mu, 0.0)
        constrained = mu > 0
    elif xi is None:
        scale = lam_vec
        mu = np.zeros_like(lam_vec)
        constrained = np.zeros(lam_vec.shape, dtype=bool)
    else:
        constrained, _ = constrained_mask(d, lam_vec, xi)
        scale = np.where(constrained, (1.0 - xi) / d, lam_vec)
        mu = scale - lam_vec
        if np.any(mu[constrained] <= 0):
            raise ArithmeticError("non-positive multiplier for a constrained item")
        mu[~constrained] = 0.0
    return _weights(P, scale), mu, constrained


def _output(P, reg, model, xi=None, equality=False):
    B, mu, constrained = from_precision(P, reg, xi=xi, equality=equality)
    return SolverOutput(B=B, mu=mu, constrained=constrained, model=model, lam=reg.lam,
                        dropout_p=reg.dropout_p, xi=0.0 if equality else xi)


def _l2(G, lam):
    return dropout_diagonal(G, 0.0, lam)


def solve_lae(G, lam, P=None):
    reg = _l2(G, lam)
    return _output(precision(G, reg) if P is None else P, reg, "LAE")


def solve_ease(G, lam, P=None):
    reg = _l2(G, lam)
    return _output(precision(G, reg) if P is None else P, reg, "EASE", equality=True)


def solve_dlae(G, reg, P=None):
    return _output(precision(G, reg) if P is None else P, reg, "DLAE")


def solve_edlae(G, reg, P=None):
    return _output(precision(G, reg) if P is None else P, reg, "EDLAE", equality=True)


def solve_rlae(G, lam, xi, P=None):
    if xi < 0:
        raise ValueError("xi must be non-negative")
    reg = _l2(G, lam)
    return _output(precision(G, reg) if P is None else P, reg, "RLAE", xi=float(xi))


def solve_rdlae(G, reg, xi, P=None):
    if xi < 0:
        raise ValueError("xi must be non-negative")
    return _output(precision(G, reg) if P is None else P, reg, "RDLAE", xi=float(xi))


def solve(G, config, P=None):
    """Dispatch on ``config.model``. Pass ``P`` to reuse a precision matrix."""
    reg = dropout_diagonal(G, config.effective_p, config.lam)
    if P is None:
        P = precision(G, reg)
    model = config.model
    if model in ("LAE", "DLAE"):
        return _output(P, reg, model)
    if model in ("EASE", "EDLAE"):
        return _output(P, reg, model, equality=True)
    return _output(P, reg, model, xi=config.xi)


def objective(B, G, reg):
    """``||X - XB||_F^2 + ||Lambda^(1/2) B||_F^2`` written in terms of ``G = X^T X``."""
    lam_vec = reg.values if isinstance(reg, RegDiagonal) else np.asarray(reg)
    R = np.eye(G.shape[0]) - B
    return float(np.sum(R * (G @ R)) + np.sum(lam_vec[:, None] * B * B))
