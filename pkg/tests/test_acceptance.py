"""Exit criteria. Each test records one PASS/FAIL line shown in the pytest summary."""

import math
import os
import time

import numpy as np
import pytest

from helpers import projected_gradient, qp_objective, random_interactions
from relaxed_lae.evaluation import (EvalConfig, evaluate_model, ndcg_at_k, recall_at_k,
                                    unbiased_metrics)
from relaxed_lae.gram import dropout_diagonal, gram, precision
from relaxed_lae.interactions import (InteractionMatrix, load_interactions, strong_split)
from relaxed_lae.solvers import (solve_dlae, solve_ease, solve_edlae, solve_lae, solve_rdlae,
                                 solve_rlae)
from relaxed_lae.spectral import eig_gram, verify_constraint_term, verify_lae_spectrum
from relaxed_lae.synthetic import zipf_interactions

RESULTS = []

LAMBDAS = (1.0, 10.0)
DROPOUTS = (0.0, 0.3, 0.7)
XIS = (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0, 2.0)
XI_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def record(name, ok, detail):
    RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, detail


def instances(count=20, m=50, n=20, density=0.2, base=1000):
    for i in range(count):
        yield gram(random_interactions(np.random.default_rng(base + i), m, n, density))


def test_c1_theorem_suite():
    t0 = time.perf_counter()
    worst_dlae = worst_edlae = 0.0
    for G in instances():
        for lam in LAMBDAS:
            for p in DROPOUTS:
                reg = dropout_diagonal(G, p, lam)
                worst_dlae = max(worst_dlae, np.abs(solve_rdlae(G, reg, 1.0).B
                                                    - solve_dlae(G, reg).B).max())
                worst_edlae = max(worst_edlae, np.abs(solve_rdlae(G, reg, 0.0).B
                                                      - solve_edlae(G, reg).B).max())
    elapsed = time.perf_counter() - t0
    record("C1 theorem suite",
           worst_dlae <= 1e-8 and worst_edlae <= 1e-8 and elapsed < 5.0,
           f"xi=1 vs DLAE {worst_dlae:.1e}, xi=0 vs EDLAE {worst_edlae:.1e} (<=1e-8), {elapsed:.2f}s (<5s)")


def test_c2_constraint_suite():
    ease_diag = slack = viol = 0.0
    neg_mu = 0.0
    for G in instances():
        for lam in LAMBDAS:
            ease_diag = max(ease_diag, np.abs(np.diag(solve_ease(G, lam).B)).max())
            for p in DROPOUTS:
                reg = dropout_diagonal(G, p, lam)
                ease_diag = max(ease_diag, np.abs(np.diag(solve_edlae(G, reg).B)).max())
                for xi in XIS:
                    for out in (solve_rlae(G, lam, xi), solve_rdlae(G, reg, xi)):
                        d = np.diag(out.B)
                        viol = max(viol, (d - xi).max())
                        neg_mu = min(neg_mu, out.mu.min())
                        slack = max(slack, np.abs(out.mu * (d - xi)).max())
    record("C2 constraint suite",
           ease_diag <= 1e-9 and viol <= 1e-9 and neg_mu >= 0 and slack <= 1e-8,
           f"max|diag B_EASE|={ease_diag:.1e}, max(diag B - xi)={viol:.1e}, "
           f"min mu={neg_mu:.1e}, max|mu (B_jj - xi)|={slack:.1e}")


def test_c3_spectral_identities():
    worst_lae = worst_con = 0.0
    bound_ok = True
    for n, m in ((20, 50), (100, 300), (200, 600)):
        for i in range(3):
            G = gram(random_interactions(np.random.default_rng(3000 + 10 * n + i), m, n, 0.1))
            dec = eig_gram(G)
            for lam in (1.0, 10.0, 100.0):
                lae = solve_lae(G, lam)
                worst_lae = max(worst_lae, verify_lae_spectrum(lae.B, dec, lam))
                worst_con = max(worst_con, verify_constraint_term(solve_ease(G, lam), lae.B, dec, lam))
                for p in DROPOUTS:
                    reg = dropout_diagonal(G, p, lam)
                    prod = np.diag(precision(G, reg)) * reg.values
                    bound_ok &= bool(np.all(prod > 0) and np.all(prod <= 1))
    record("C3 spectral identities",
           worst_lae <= 1e-7 and worst_con <= 1e-7 and bound_ok,
           f"LAE spectrum residual {worst_lae:.1e}, constraint term residual {worst_con:.1e} "
           f"(<=1e-7), 0<P_jj*Lambda_jj<=1: {bound_ok}")


def test_c4_decomposition_identity():
    worst = 0.0
    for G in instances():
        for lam in LAMBDAS:
            P = precision(G, dropout_diagonal(G, 0.0, lam))
            out = solve_ease(G, lam)
            worst = max(worst, np.abs(out.B - (P @ G - P * out.mu[None, :])).max())
            for p in DROPOUTS[1:]:
                reg = dropout_diagonal(G, p, lam)
                Pp = precision(G, reg)
                out = solve_edlae(G, reg)
                worst = max(worst, np.abs(out.B - (Pp @ G - Pp * out.mu[None, :])).max())
    record("C4 decomposition identity", worst <= 1e-9, f"max residual {worst:.1e} (<=1e-9)")


def test_c5_oracle_equivalence():
    t0 = time.perf_counter()
    worst_obj = worst_b = 0.0
    for i in range(10):
        rng = np.random.default_rng(5000 + i)
        n = int(rng.integers(3, 9))
        G = gram(random_interactions(rng, m=30, n=n, density=0.3))
        lam = float(rng.choice([1.0, 2.0, 5.0]))
        p = float(rng.choice([0.1, 0.3, 0.5]))
        xi = float(rng.choice([0.1, 0.3, 0.5, 0.8]))
        for reg, out in ((dropout_diagonal(G, 0.0, lam), solve_rlae(G, lam, xi)),
                         (dropout_diagonal(G, p, lam), solve_rdlae(G, dropout_diagonal(G, p, lam), xi))):
            B_ref, _ = projected_gradient(G, reg.values, xi)
            f_ref = qp_objective(B_ref, G, reg.values)
            f_closed = qp_objective(out.B, G, reg.values)
            worst_obj = max(worst_obj, abs(f_closed - f_ref) / abs(f_ref))
            worst_b = max(worst_b, np.abs(out.B - B_ref).max())
    elapsed = time.perf_counter() - t0
    record("C5 oracle equivalence",
           worst_obj <= 1e-6 and worst_b <= 1e-3 and elapsed < 30.0,
           f"objective rel. gap {worst_obj:.1e} (<=1e-6), max|B - B_pg| {worst_b:.1e} (<=1e-3), "
           f"{elapsed:.2f}s (<30s)")


def test_c6_metric_fixtures():
    a, b, x = 0, 1, 2
    checks = [
        recall_at_k([a, x, b], {a, b}, 3) - 1.0,
        ndcg_at_k([a, x, b], {a, b}, 3) - (1 + 1 / math.log2(4)) / (1 + 1 / math.log2(3)),
        unbiased_metrics([0, 2], {0}, np.array([0.5, 1.0, 1.0]), 1)[0] - 1.0,
        unbiased_metrics([0, 2, 1], {0, 1}, np.array([0.5, 1.0, 1.0]), 2)[0] - 2 / 3,
    ]
    rng = np.random.default_rng(6)
    uniform = np.full(40, 0.25)
    for _ in range(100):
        ranking = rng.permutation(40)
        held = set(rng.choice(40, size=int(rng.integers(1, 12)), replace=False).tolist())
        k = int(rng.integers(1, 40))
        r_u, n_u = unbiased_metrics(ranking, held, uniform, k)
        checks += [r_u - recall_at_k(ranking, held, k), n_u - ndcg_at_k(ranking, held, k)]
    worst = max(abs(c) for c in checks)
    record("C6 metric fixtures", worst <= 1e-12, f"max deviation {worst:.1e} (<=1e-12)")


def _trend_seed(seed):
    """Tail NDCG@100 on test of EASE vs. RLAE at the same lambda.

    lambda: best EASE validation NDCG@100; xi: best RLAE validation NDCG@100
    over the default xi grid.
    """
    X = zipf_interactions(num_users=2000, num_items=500, mean_items=40, s=1.2, seed=seed)
    split = strong_split(X, seed=seed)
    G = gram(split.train)
    cfg = EvalConfig(ks=(100,))
    best_lam, best_val = None, -1.0
    cache = {}
    for lam in (10.0, 20.0, 50.0, 100.0, 200.0, 500.0):
        P = precision(G, dropout_diagonal(G, 0.0, lam))
        cache[lam] = P
        v = evaluate_model(solve_ease(G, lam, P=P).B, split, cfg, "val").get("aoa", "ndcg", 100)
        if v > best_val:
            best_lam, best_val = lam, v
    P = cache[best_lam]
    ease_tail = evaluate_model(solve_ease(G, best_lam, P=P).B, split, cfg).get("tail", "ndcg", 100)
    best_xi, best_val, best_B = None, -1.0, None
    for xi in XI_GRID:
        B = solve_rlae(G, best_lam, xi, P=P).B
        v = evaluate_model(B, split, cfg, "val").get("aoa", "ndcg", 100)
        if v > best_val:
            best_xi, best_val, best_B = xi, v, B
    rlae_tail = evaluate_model(best_B, split, cfg).get("tail", "ndcg", 100)
    return best_lam, best_xi, ease_tail, rlae_tail


def test_c7_tail_trend():
    wins, details = 0, []
    for seed in range(5):
        lam, xi, ease_tail, rlae_tail = _trend_seed(seed)
        wins += rlae_tail >= ease_tail
        details.append(f"s{seed}: lam={lam:g} xi={xi:g} {rlae_tail:.4f}>={ease_tail:.4f}")
    record("C7 tail trend (>=4/5 seeds)", wins >= 4, f"{wins}/5; " + "; ".join(details))


def test_c8_constrained_fraction():
    at_zero, at_one = [], []
    for G in instances():
        for lam in LAMBDAS:
            for p in DROPOUTS:
                reg = dropout_diagonal(G, p, lam)
                at_zero.append(solve_rdlae(G, reg, 0.0).constrained_fraction)
                at_one += [solve_rdlae(G, reg, xi).constrained_fraction for xi in (1.0, 1.5)]
            at_zero.append(solve_rlae(G, lam, 0.0).constrained_fraction)
            at_one.append(solve_rlae(G, lam, 1.0).constrained_fraction)
    ok = min(at_zero) == 1.0 and max(at_one) == 0.0
    record("C8 constrained fraction", ok,
           f"xi=0 min fraction {min(at_zero)}, xi>=1 max fraction {max(at_one)}")


ML20M = os.environ.get("RELAXED_LAE_ML20M")


@pytest.mark.slow
@pytest.mark.skipif(not ML20M, reason="set RELAXED_LAE_ML20M to the ML-20M ratings.csv")
def test_optional_ml20m_ease_recall():
    # ratings >= 4 kept, users with >= 5 interactions; EASE strong-generalization Recall@20
    X = load_interactions(ML20M, format="triples", binarize_threshold=3.5)
    X = InteractionMatrix.from_rows([r for r in X.rows() if r.size >= 5], X.num_items)
    split = strong_split(X, seed=98765)
    G = gram(split.train)
    cfg = EvalConfig(ks=(20, 100))
    best = max(((evaluate_model(solve_ease(G, lam).B, split, cfg, "val").get("aoa", "ndcg", 100), lam)
                for lam in (100.0, 200.0, 500.0, 1000.0)))
    recall = evaluate_model(solve_ease(G, best[1]).B, split, cfg).get("aoa", "recall", 20)
    record("Optional ML-20M EASE R@20", abs(recall - 0.3905) <= 0.01,
           f"{recall:.4f} vs 0.3905 +/- 0.01 (lambda={best[1]:g})")
