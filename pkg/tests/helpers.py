"""Shared test utilities: random instances and an independent constrained-QP oracle."""

import numpy as np

from relaxed_lae.interactions import InteractionMatrix


def random_interactions(rng, m=50, n=20, density=0.2):
    dense = rng.random((m, n)) < density
    return InteractionMatrix.from_rows([np.flatnonzero(r) for r in dense], n)


def naive_gram(X):
    n = X.num_items
    G = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            for u in range(X.num_users):
                row = set(X.row(u).tolist())
                if i in row and j in row:
                    G[i, j] += 1
    return G


def projected_gradient(G, reg_values, xi, tol=1e-10, max_iter=2_000_000):
    """Minimize tr((I-B)^T G (I-B)) + sum_j reg_j ||B_j.||^2 s.t. diag(B) <= xi.

    Plain projected gradient with step 1/L; stops when the gradient
    mapping norm drops below ``tol``. Independent of any matrix inverse.
    """
    n = G.shape[0]
    Lam = np.diag(reg_values)
    H = G + Lam
    L = 2.0 * np.linalg.eigvalsh(H).max()
    step = 1.0 / L
    B = np.zeros((n, n))
    diag = np.diag_indices(n)
    for it in range(max_iter):
        grad = 2.0 * (H @ B) - 2.0 * G
        nxt = B - step * grad
        nxt[diag] = np.minimum(nxt[diag], xi)
        mapping = (B - nxt) / step
        B = nxt
        if np.linalg.norm(mapping) <= tol:
            return B, it
    raise RuntimeError("projected gradient did not converge")


def qp_objective(B, G, reg_values):
    R = np.eye(G.shape[0]) - B
    return float(np.trace(R.T @ G @ R) + np.sum(reg_values[:, None] * B ** 2))
