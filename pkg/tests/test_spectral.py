import numpy as np
import pytest

from helpers import random_interactions
from relaxed_lae.gram import dropout_diagonal, gram
from relaxed_lae.solvers import SolverOutput, solve_ease, solve_lae
from relaxed_lae.spectral import (eig_gram, pc_group_heatmap, scaling_curves,
                                  verify_constraint_term, verify_lae_spectrum,
                                  write_curves_csv, write_heatmap_csv)


def test_eig_2x2(G2):
    dec = eig_gram(G2)
    assert np.allclose(dec.eigenvalues, [3, 1], atol=1e-14, rtol=0)
    v0, v1 = dec.eigenvectors.T
    assert abs(abs(v0 @ np.array([1, 1]) / np.sqrt(2)) - 1) < 1e-14
    assert abs(abs(v1 @ np.array([1, -1]) / np.sqrt(2)) - 1) < 1e-14


def test_eig_isotropic():
    dec = eig_gram(4.0 * np.eye(5))
    assert np.allclose(dec.eigenvalues, 4.0)
    assert np.abs(dec.reconstruct() - 4.0 * np.eye(5)).max() <= 1e-12


@pytest.mark.parametrize("n", [10, 60, 200])
def test_eig_invariants(rng, n):
    G = gram(random_interactions(rng, m=3 * n, n=n, density=0.1))
    dec = eig_gram(G)
    V = dec.eigenvectors
    assert np.abs(V.T @ V - np.eye(n)).max() <= 1e-8
    assert np.all(np.diff(dec.eigenvalues) <= 0) and dec.eigenvalues.min() >= 0
    assert np.abs(dec.reconstruct() - G).max() <= 1e-6 * np.abs(G).max()
    assert abs(np.trace(G) - dec.eigenvalues.sum()) <= 1e-8 * max(1.0, np.trace(G))


def test_eig_rejects_asymmetric():
    with pytest.raises(ValueError):
        eig_gram(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_scaling_curves_values():
    c = scaling_curves([3.0, 0.0], 1.0)
    assert c.reg_curve.tolist() == [0.75, 0.0]
    assert c.constraint_curve.tolist() == [0.25, 1.0]
    tiny = scaling_curves([5.0, 0.1], 1e-12)
    assert np.allclose(tiny.reg_curve, 1.0, atol=1e-10)


def test_scaling_curves_monotone(rng):
    dec = eig_gram(gram(random_interactions(rng, m=100, n=30)))
    for lam in (0.5, 10.0, 1000.0):
        c = scaling_curves(dec.eigenvalues, lam)
        assert np.all(np.diff(c.reg_curve) <= 0) and np.all(np.diff(c.constraint_curve) >= 0)
        assert c.reg_curve.min() >= 0 and c.reg_curve.max() <= 1
        assert c.constraint_curve.min() > 0 and c.constraint_curve.max() <= 1 / lam


def test_lae_spectrum_2x2(G2):
    B = solve_lae(G2, 1.0).B
    assert sorted(np.linalg.eigvalsh(B)) == pytest.approx([0.5, 0.75], abs=1e-14)
    assert verify_lae_spectrum(B, eig_gram(G2), 1.0) <= 1e-14


@pytest.mark.parametrize("lam", [1.0, 30.0])
def test_lae_spectrum_random(rng, lam):
    G = gram(random_interactions(rng, m=150, n=50))
    assert verify_lae_spectrum(solve_lae(G, lam).B, eig_gram(G), lam) <= 1e-7


def test_lae_spectrum_huge_lambda(G2):
    B = solve_lae(G2, 1e9).B
    assert np.abs(np.linalg.eigvalsh(B) - np.array([1, 3]) / 1e9).max() < 1e-15


def test_constraint_term_2x2(G2):
    dec = eig_gram(G2)
    assert verify_constraint_term(solve_ease(G2, 1.0), solve_lae(G2, 1.0).B, dec, 1.0) <= 1e-9


def test_constraint_term_zero_mu(G2):
    lae = solve_lae(G2, 1.0)
    fake = SolverOutput(B=lae.B, mu=np.zeros(2), constrained=np.zeros(2, bool))
    assert verify_constraint_term(fake, lae.B, eig_gram(G2), 1.0) == 0.0


def test_constraint_term_random(rng):
    G = gram(random_interactions(rng, m=50, n=20))
    assert verify_constraint_term(solve_ease(G, 2.0), solve_lae(G, 2.0).B, eig_gram(G), 2.0) <= 1e-7


def test_dlae_not_diagonal_in_pc_basis(rng):
    # per-item regularization does not commute with V, so only residual checks apply
    from relaxed_lae.solvers import solve_dlae
    G = gram(random_interactions(rng, m=80, n=15, density=0.3))
    B = solve_dlae(G, dropout_diagonal(G, 0.5, 1.0)).B
    D = eig_gram(G).eigenvectors.T @ B @ eig_gram(G).eigenvectors
    assert np.abs(D - np.diag(np.diag(D))).max() > 1e-6


def test_heatmap_full_group_is_gram(rng):
    G = gram(random_interactions(rng))
    dec = eig_gram(G)
    items = np.array([3, 0, 7])
    hm = pc_group_heatmap(dec, 1.0, "top", items)
    assert np.allclose(hm.values, G[np.ix_(items, items)], atol=1e-9, rtol=0)


def test_heatmap_single_pair(G2):
    hm = pc_group_heatmap(eig_gram(G2), 0.5, "top", [0, 1])
    assert np.allclose(hm.values, 1.5, atol=1e-14, rtol=0)


def test_heatmap_top_bottom_cover(rng):
    G = gram(random_interactions(rng, n=20))
    dec = eig_gram(G)
    items = np.arange(0, 20, 3)
    total = (pc_group_heatmap(dec, 0.6, "top", items).values
             + pc_group_heatmap(dec, 0.4, "bottom", items).values)
    assert np.allclose(total, G[np.ix_(items, items)], atol=1e-9, rtol=0)


def test_heatmap_errors(G2):
    dec = eig_gram(G2)
    with pytest.raises(ValueError):
        pc_group_heatmap(dec, 0.0)
    with pytest.raises(ValueError):
        pc_group_heatmap(dec, 0.5, "top", [0, 0])
    with pytest.raises(ValueError):
        pc_group_heatmap(dec, 0.5, "middle")


def test_csv_exports(tmp_path, G2):
    dec = eig_gram(G2)
    write_curves_csv(tmp_path / "c.csv", scaling_curves(dec.eigenvalues, 1.0))
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "rank,sigma_sq,reg_value,constraint_value"
    assert [float(x) for x in lines[1].split(",")[2:]] == pytest.approx([0.75, 0.25])
    write_heatmap_csv(tmp_path / "h.csv", pc_group_heatmap(dec, 1.0, "top", [1, 0]))
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "item,1,0"
    assert rows[1].startswith("1,")
