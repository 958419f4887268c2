import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from amhtest.dimension import (
    RidgeConfig,
    char_moment,
    default_ridges,
    hermitian_eigenvalues,
    target_matrix,
    tdrr_chain,
    tdrr_dimension,
)
from amhtest.errors import ContractViolation


def jacobi_eigenvalues(a, tol=1e-15, max_sweeps=100):
    """Cyclic complex Jacobi rotations on a Hermitian matrix."""
    a = np.array(a, dtype=complex)
    n = a.shape[0]
    scale = np.linalg.norm(a)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(abs(a[i, j]) ** 2 for i in range(n) for j in range(n) if i != j))
        if off <= tol * max(scale, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                phase = cmath.exp(1j * cmath.phase(apq))
                theta = 0.5 * math.atan2(2 * abs(apq), (a[q, q] - a[p, p]).real)
                c, s = math.cos(theta), math.sin(theta)
                u = np.eye(n, dtype=complex)
                u[p, p] = c
                u[q, q] = c
                u[p, q] = s * phase
                u[q, p] = -s * phase.conjugate()
                a = u.conj().T @ a @ u
    assert math.sqrt(sum(abs(a[i, j]) ** 2 for i in range(n) for j in range(n) if i != j)) < 1e-12 * max(scale, 1)
    return np.sort(np.diag(a).real)[::-1]


def naive_char_moment(x, e, t):
    n, p = len(e), len(x[0])
    out = [0j] * p
    for j in range(n):
        ph = cmath.exp(1j * t * e[j])
        for i in range(p):
            out[i] += x[j][i] * ph
    return np.array(out) / n


def naive_target(x, e):
    n, p = x.shape
    xc = x - x.mean(axis=0)
    m = np.zeros((p, p), dtype=complex)
    for k in range(n):
        mk = naive_char_moment(xc, e, e[k])
        for a in range(p):
            for b in range(p):
                m[a, b] += mk[a] * mk[b].conjugate()
    return m / n


def naive_tdrr(lam, c1, c2, tau):
    p = len(lam)
    s = [v / (v + 1) for v in lam] + [0.0, 0.0]
    star = [(s[j] ** 2 + c1) / (s[j + 1] ** 2 + c1) - 1 for j in range(p + 1)]
    r = [(star[j + 1] + c2) / (star[j] + c2) for j in range(p)]
    q = 0
    for j in range(p):
        if r[j] <= tau:
            q = j + 1
    return q


class TestCharMoment:
    def test_t_zero_is_centred_mean(self):
        x = np.random.default_rng(0).standard_normal((7, 3))
        xc = x - x.mean(axis=0)
        np.testing.assert_allclose(char_moment(xc, np.ones(7), 0.0), 0.0, atol=1e-15)

    def test_common_residual(self):
        x = np.random.default_rng(1).standard_normal((9, 2))
        xc = x - x.mean(axis=0)
        np.testing.assert_allclose(char_moment(xc, np.full(9, 0.7), 1.3), 0.0, atol=1e-15)

    def test_handcrafted(self):
        x = np.array([[1.0, 2.0], [-0.5, 0.0], [0.25, -1.0], [3.0, 0.5]])
        e = np.array([0.1, -1.2, 0.7, 2.0])
        got = char_moment(x, e, 0.8)
        np.testing.assert_allclose(got, naive_char_moment(x, e, 0.8), rtol=0, atol=1e-14)


class TestTargetMatrix:
    def test_matches_triple_loop(self):
        rng = np.random.default_rng(2)
        x, e = rng.standard_normal((5, 2)), rng.standard_normal(5)
        np.testing.assert_allclose(target_matrix(x, e).m, naive_target(x, e), rtol=0, atol=1e-13)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_triple_loop_random_sizes(self, seed):
        rng = np.random.default_rng(seed + 10)
        n, p = int(rng.integers(2, 20)), int(rng.integers(1, 5))
        x, e = rng.standard_normal((n, p)) * 2, rng.standard_normal(n) * 3
        np.testing.assert_allclose(target_matrix(x, e).m, naive_target(x, e), rtol=0, atol=1e-13)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 100_000), n=st.integers(2, 40), p=st.integers(1, 6))
    def test_invariants(self, seed, n, p):
        rng = np.random.default_rng(seed)
        x, e = rng.standard_normal((n, p)), rng.standard_normal(n) * 2
        tm = target_matrix(x, e)
        assert np.max(np.abs(tm.m - tm.m.conj().T)) <= 1e-12
        assert np.all(tm.eigenvalues >= -1e-10)
        assert np.all(np.diff(tm.eigenvalues) <= 1e-15)
        assert abs(tm.eigenvalues.sum() - tm.trace) <= 1e-10
        assert np.linalg.matrix_rank(tm.m, tol=1e-10) <= min(p, n)
        xc = x - x.mean(axis=0)
        direct = sum(np.linalg.norm(char_moment(xc, e, t)) ** 2 for t in e) / n
        assert abs(tm.trace - direct) <= 1e-12

    def test_sample_permutation(self):
        rng = np.random.default_rng(3)
        x, e = rng.standard_normal((60, 3)), rng.standard_normal(60)
        perm = rng.permutation(60)
        np.testing.assert_allclose(
            target_matrix(x[perm], e[perm]).eigenvalues, target_matrix(x, e).eigenvalues, atol=1e-10
        )

    def test_independent_residuals_shrink(self):
        rng = np.random.default_rng(4)
        x, e = rng.standard_normal((2000, 3)), rng.standard_normal(2000)
        assert target_matrix(x, e).eigenvalues[0] < 0.05

    def test_rank_one_dependence(self):
        # with e = X_1 standard normal, m(t) = (i t exp(-t^2/2), 0, 0) and the
        # single nonzero eigenvalue is E[t^2 exp(-t^2)] over t ~ N(0,1) = 3^(-3/2)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2000, 3))
        lam = target_matrix(x, x[:, 0]).eigenvalues
        assert lam[0] == pytest.approx(3 ** -1.5, abs=0.03)
        assert lam[1] < 0.01

    def test_rate_under_independence(self):
        rng = np.random.default_rng(6)

        def med(n):
            vals = []
            for _ in range(100):
                x, e = rng.standard_normal((n, 2)), rng.standard_normal(n)
                vals.append(target_matrix(x, e).eigenvalues[0])
            return np.median(vals)

        assert med(2000) < 0.25 * med(500)


class TestHermitianEigenvalues:
    def test_identity(self):
        np.testing.assert_allclose(hermitian_eigenvalues(np.eye(4)), np.ones(4))

    def test_diagonal(self):
        np.testing.assert_allclose(hermitian_eigenvalues(np.diag([3.0, 1.0, 2.0])), [3.0, 2.0, 1.0])

    @pytest.mark.parametrize("seed", range(10))
    def test_against_jacobi(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        m = a @ a.conj().T
        vals = hermitian_eigenvalues(m)
        assert abs(vals.sum() - np.trace(m).real) <= 1e-10
        np.testing.assert_allclose(vals, jacobi_eigenvalues(m), atol=1e-9)

    def test_rejects_non_hermitian(self):
        with pytest.raises(ContractViolation):
            hermitian_eigenvalues(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestRidges:
    def test_log_two(self):
        r = default_ridges(math.exp(2))
        assert r.c1n == pytest.approx(3e-4 * math.sqrt(8) * 2 / math.e, rel=1e-12)

    def test_n200(self):
        r = default_ridges(200)
        assert r.c1n == pytest.approx(3.179e-4, rel=1e-3)
        assert r.c2n == pytest.approx(0.8477, rel=1e-3)
        assert r.tau == 0.5

    def test_decreasing(self):
        assert default_ridges(400).c1n < default_ridges(200).c1n

    def test_validation(self):
        with pytest.raises(ValueError):
            RidgeConfig(1e-4, 0.5, tau=1.0)


class TestTDRR:
    def test_zero_spectrum(self):
        chain = tdrr_chain(np.zeros(4), default_ridges(200))
        assert chain.q_hat == 0
        np.testing.assert_array_equal(chain.s_star, 0.0)
        np.testing.assert_array_equal(chain.r, 1.0)

    def test_single_spike(self):
        assert tdrr_dimension(np.array([10.0, 0.0, 0.0]), default_ridges(200)) == 1

    def test_full_rank(self):
        assert tdrr_dimension(np.array([10.0, 9.0, 8.0]), default_ridges(200)) == 3

    def test_negative_noise_clamped(self):
        assert tdrr_dimension(np.array([0.0, -1e-12]), default_ridges(200)) == 0

    @settings(max_examples=200, deadline=None)
    @given(
        lam=arrays(float, st.integers(1, 8), elements=st.floats(0, 50)),
        n=st.integers(10, 5000),
    )
    def test_matches_naive_chain(self, lam, n):
        lam = np.sort(lam)[::-1]
        cfg = default_ridges(n)
        q = tdrr_dimension(lam, cfg)
        assert 0 <= q <= lam.size
        assert q == naive_tdrr(list(lam), cfg.c1n, cfg.c2n, cfg.tau)
        assert tdrr_dimension(lam * 0.0, cfg) == 0
