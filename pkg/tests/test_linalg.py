"""Jacobi eigensolver conventions and PCA projection."""

import numpy as np
import pytest

from lacvit.errors import ContractError
from lacvit.linalg import pca_project, sym_eig
from lacvit.rng import RngStream


def random_symmetric(seed, d):
    m = RngStream(seed, 0).normal(0, 1, (d, d))
    return m + m.T


class TestSymEig:
    def test_diagonal_matrix(self):
        res = sym_eig(np.diag([3.0, 1.0, 2.0]))
        assert np.allclose(res.eigenvalues, [3.0, 2.0, 1.0])
        expected = np.zeros((3, 3))
        expected[0, 0] = expected[2, 1] = expected[1, 2] = 1.0
        assert np.array_equal(res.eigenvectors, expected)

    def test_identity_degenerate_tiebreak(self):
        res = sym_eig(np.eye(5))
        assert np.allclose(res.eigenvalues, 1.0)
        assert np.array_equal(res.eigenvectors, np.eye(5))

    def test_reconstruction(self):
        m = random_symmetric(3, 8)
        res = sym_eig(m)
        recon = res.eigenvectors @ np.diag(res.eigenvalues) @ res.eigenvectors.T
        assert np.abs(recon - m).max() < 1e-8

    def test_orthonormal_columns(self):
        res = sym_eig(random_symmetric(11, 12))
        gram = res.eigenvectors.T @ res.eigenvectors
        assert np.abs(gram - np.eye(12)).max() < 1e-8

    def test_sign_convention(self):
        res = sym_eig(random_symmetric(17, 6))
        for k in range(6):
            col = res.eigenvectors[:, k]
            first = col[np.abs(col) > 1e-12][0]
            assert first > 0

    def test_eigenvalues_invariant_under_permutation_similarity(self):
        m = random_symmetric(23, 7)
        perm = RngStream(29, 0).permutation(7)
        p = np.eye(7)[perm]
        res_a = sym_eig(m)
        res_b = sym_eig(p @ m @ p.T)
        assert np.abs(np.sort(res_a.eigenvalues) - np.sort(res_b.eigenvalues)).max() < 1e-9

    def test_deterministic(self):
        m = random_symmetric(31, 9)
        a, b = sym_eig(m), sym_eig(m)
        assert a.eigenvectors.tobytes() == b.eigenvectors.tobytes()
        assert a.eigenvalues.tobytes() == b.eigenvalues.tobytes()

    def test_rejects_nonsymmetric(self):
        with pytest.raises(ContractError):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_nonsquare(self):
        with pytest.raises(ContractError):
            sym_eig(np.zeros((2, 3)))

    def test_matches_lapack_eigenvalues(self):
        for seed in range(5):
            m = random_symmetric(seed, 16)
            ours = sym_eig(m).eigenvalues
            ref = np.linalg.eigvalsh(m)[::-1]
            assert np.abs(ours - ref).max() < 1e-10


class TestPcaProject:
    def test_collinear_points_preserve_distances(self):
        t = np.linspace(-2, 3, 7)
        pts = np.stack([t, 2 * t], axis=1)  # a line in 2-D
        coords = pca_project(pts, 1)[:, 0]
        for i in range(len(t)):
            for j in range(len(t)):
                d_orig = np.linalg.norm(pts[i] - pts[j])
                assert abs(abs(coords[i] - coords[j]) - d_orig) < 1e-12

    def test_full_rank_projection_is_isometry(self):
        x = RngStream(7, 0).normal(0, 1, (20, 5))
        y = pca_project(x, 5)
        d_x = np.linalg.norm(x[:, None] - x[None, :], axis=-1)
        d_y = np.linalg.norm(y[:, None] - y[None, :], axis=-1)
        assert np.abs(d_x - d_y).max() < 1e-8

    def test_captured_variance_equals_top_eigenvalues(self):
        x = RngStream(13, 0).normal(0, 1, (50, 8))
        y = pca_project(x, 2)
        centered = x - x.mean(axis=0)
        lam = np.linalg.eigvalsh(centered.T @ centered / 49)[::-1]
        assert abs(y.var(axis=0, ddof=1).sum() - lam[:2].sum()) < 1e-8

    def test_k_too_large_rejected(self):
        with pytest.raises(ContractError):
            pca_project(np.zeros((5, 3)), 4)

    def test_single_row_rejected(self):
        with pytest.raises(ContractError):
            pca_project(np.zeros((1, 3)), 1)
