import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clupisac.prox import (InfeasibleError, ProjectionToolkit, nuclear_norm, project_box,
                           project_l1_simplex, project_nuclear_ball, project_residual_ball,
                           singular_value_threshold)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# -- box ---------------------------------------------------------------------------

def test_box_examples():
    b = 0.3
    x = np.array([0.1 - 0.2j, -0.29 + 0.0j])
    np.testing.assert_array_equal(project_box(x, b), x)
    np.testing.assert_allclose(project_box(np.array([(2 + 3j) * b]), b), [(1 + 1j) * b])
    with pytest.raises(ValueError):
        project_box(x, 0.0)


# -- simplex and nuclear ball ----------------------------------------------------------

@pytest.mark.parametrize("sigma, s, expected", [
    ([3, 1], 2, [2, 0]),
    ([0.2, 0.1], 1, [0.2, 0.1]),
    ([1, 1, 1], 1.5, [0.5, 0.5, 0.5]),
])
def test_simplex_examples(sigma, s, expected):
    np.testing.assert_allclose(project_l1_simplex(sigma, s), expected, atol=1e-14)


def test_simplex_rejects_negative():
    with pytest.raises(ValueError):
        project_l1_simplex([1.0, -0.1], 1.0)


def test_nuclear_ball_examples():
    X = np.diag([3.0, 1.0]).astype(complex)
    np.testing.assert_allclose(project_nuclear_ball(X, 5.0), X)
    np.testing.assert_allclose(project_nuclear_ball(X, 2.0), np.diag([2.0, 0.0]), atol=1e-14)
    np.testing.assert_array_equal(project_nuclear_ball(X, 0.0), 0)


@settings(max_examples=50, deadline=None)
@given(m=st.integers(1, 7), n=st.integers(1, 7), s=st.floats(0.0, 6.0), seed=st.integers(0, 10**6))
def test_nuclear_projection_properties(m, n, s, seed):
    rng = np.random.default_rng(seed)
    X = crandn(rng, m, n)
    P = project_nuclear_ball(X, s)
    sx = np.linalg.svd(X, compute_uv=False)
    sp = np.linalg.svd(P, compute_uv=False)
    assert np.all(sp <= sx + 1e-10)
    assert abs(nuclear_norm(P) - min(sx.sum(), s)) <= 1e-8 * max(1.0, s)
    np.testing.assert_allclose(project_nuclear_ball(P, s), P, atol=1e-10)


def test_svt_matches_definition():
    rng = np.random.default_rng(3)
    X = crandn(rng, 6, 4)
    U, s, Vh = np.linalg.svd(X, full_matrices=False)
    expected = (U * np.maximum(s - 1.0, 0)) @ Vh
    np.testing.assert_allclose(singular_value_threshold(X, 1.0), expected, atol=1e-12)


# -- residual ball ---------------------------------------------------------------

def test_residual_ball_identity_example():
    x = np.array([2.0 + 0j, 0.0])
    np.testing.assert_allclose(project_residual_ball(x, np.zeros(2), 1.0, np.eye(2)), x / 2,
                               atol=1e-9)


def test_residual_ball_feasible_point_unchanged():
    rng = np.random.default_rng(0)
    A = crandn(rng, 5, 8)
    y = crandn(rng, 5)
    x = np.linalg.lstsq(A, y, rcond=None)[0]
    np.testing.assert_array_equal(project_residual_ball(x, y, 0.1, A), x)


def test_residual_ball_infeasible():
    rng = np.random.default_rng(1)
    A = crandn(rng, 8, 3)
    y = crandn(rng, 8)
    tk = ProjectionToolkit(A, y)
    with pytest.raises(InfeasibleError):
        tk.project_residual(np.zeros(3), 0.5 * tk.min_residual)


def test_toolkit_reconstructs_operator():
    rng = np.random.default_rng(2)
    A = crandn(rng, 9, 12)
    tk = ProjectionToolkit(A, crandn(rng, 9))
    assert np.linalg.norm(tk.reconstruct() - A) <= 1e-10 * np.linalg.norm(A)


@pytest.mark.parametrize("shape", [(6, 9), (9, 6), (7, 7)])
def test_residual_ball_kkt(shape):
    rng = np.random.default_rng(shape[0] * 10 + shape[1])
    for _ in range(20):
        A = crandn(rng, *shape)
        y = crandn(rng, shape[0])
        tk = ProjectionToolkit(A, y)
        x = 3 * crandn(rng, shape[1])
        r = tk.min_residual + 0.3 * (tk.residual(x) - tk.min_residual)
        xp, lam = tk.project_residual(x, r, return_multiplier=True)
        res = tk.residual(xp)
        assert r - 1e-8 <= res <= r + 1e-12
        # stationarity: x - x' = lam A^H (A x' - y), so x - x' lies in range(A^H)
        d = x - xp
        coef = np.linalg.lstsq(A.conj().T, d, rcond=None)[0]
        assert np.linalg.norm(A.conj().T @ coef - d) <= 1e-8 * max(1.0, np.linalg.norm(d))
        np.testing.assert_allclose(d, lam * A.conj().T @ (A @ xp - y), atol=1e-8)
        assert lam > 0


def _brute_force_ball(x, y, r, A):
    """Dense penalized least squares swept over lambda, then refined by bisection."""
    n = A.shape[1]
    AH = A.conj().T

    def sol(lam):
        return np.linalg.solve(np.eye(n) + lam * AH @ A, x + lam * AH @ y)

    def res(lam):
        return np.linalg.norm(y - A @ sol(lam))

    grid = np.logspace(-8, 10, 400)
    vals = np.array([res(l) for l in grid])
    k = int(np.argmax(vals <= r))
    lo, hi = (grid[k - 1] if k else 0.0), grid[k]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if res(mid) > r:
            lo = mid
        else:
            hi = mid
    return sol(hi)


def test_residual_ball_matches_brute_force():
    rng = np.random.default_rng(5)
    for trial in range(15):
        m, n = rng.integers(2, 9, size=2)
        A = crandn(rng, m, n)
        y = crandn(rng, m)
        tk = ProjectionToolkit(A, y)
        x = 2 * crandn(rng, n)
        r = tk.min_residual + 0.5 * (tk.residual(x) - tk.min_residual)
        np.testing.assert_allclose(tk.project_residual(x, r), _brute_force_ball(x, y, r, A),
                                   atol=1e-6)


# -- idempotence and nonexpansiveness on random pairs -------------------------------------

def _pairs(seed, n=100):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        yield rng, crandn(rng, 12), crandn(rng, 12)


def test_box_idempotent_nonexpansive():
    for rng, a, b in _pairs(0):
        pa, pb = project_box(a, 0.4), project_box(b, 0.4)
        np.testing.assert_array_equal(project_box(pa, 0.4), pa)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12


def test_residual_ball_idempotent_nonexpansive():
    rng = np.random.default_rng(7)
    A = crandn(rng, 8, 12)
    y = crandn(rng, 8)
    tk = ProjectionToolkit(A, y)
    for rng, a, b in _pairs(1):
        pa, pb = tk.project_residual(a, 1.0), tk.project_residual(b, 1.0)
        assert np.linalg.norm(tk.project_residual(pa, 1.0) - pa) <= 1e-9
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-9


def test_nuclear_ball_idempotent_nonexpansive():
    for rng, a, b in _pairs(2):
        A_, B_ = a.reshape(4, 3), b.reshape(4, 3)
        pa, pb = project_nuclear_ball(A_, 1.5), project_nuclear_ball(B_, 1.5)
        np.testing.assert_allclose(project_nuclear_ball(pa, 1.5), pa, atol=1e-10)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(A_ - B_) + 1e-10
