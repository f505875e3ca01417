import math

import numpy as np
import pytest

from deltasketch.linalg import NULL_REL_TOL, thin_svd, t_quantile


# ---------------------------------------------------------------------------
# reference implementations, kept deliberately independent of the package
# ---------------------------------------------------------------------------

def jacobi_eigvals(s: np.ndarray, sweeps: int = 60) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by classical Jacobi rotations."""
    s = s.copy()
    n = s.shape[0]
    for _ in range(sweeps):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += s[i, j] ** 2
        if math.sqrt(off) < 1e-14 * max(1.0, float(np.abs(np.diag(s)).max())):
            break
        for i in range(n - 1):
            for j in range(i + 1, n):
                if s[i, j] == 0.0:
                    continue
                theta = (s[j, j] - s[i, i]) / (2.0 * s[i, j])
                if theta == 0.0:
                    t = 1.0
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * c
                rot = np.eye(n)
                rot[i, i] = rot[j, j] = c
                rot[i, j] = sn
                rot[j, i] = -sn
                s = rot.T @ s @ rot
    return np.sort(np.diag(s))[::-1]


def t_density(x: np.ndarray, nu: float) -> np.ndarray:
    lognorm = math.lgamma((nu + 1.0) / 2.0) - math.lgamma(nu / 2.0)
    coef = math.exp(lognorm) / math.sqrt(nu * math.pi)
    return coef * (1.0 + x * x / nu) ** (-(nu + 1.0) / 2.0)


def simpson(y: np.ndarray, h: float) -> float:
    # y over an odd number of equally spaced points
    assert y.size % 2 == 1
    return (h / 3.0) * float(y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def normal_quantile_bisect(p: float) -> float:
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def assert_valid_factors(a: np.ndarray, res, rtol: float = 1e-10) -> None:
    u, d, v = res
    r = min(a.shape)
    assert u.shape == (a.shape[0], r)
    assert v.shape == (a.shape[1], r)
    assert d.shape == (r,)
    assert np.all(d >= 0.0)
    assert np.all(np.diff(d) <= 0.0)
    eye = np.eye(r)
    assert np.max(np.abs(v.T @ v - eye)) < rtol
    assert np.max(np.abs(u.T @ u - eye)) < rtol
    recon = (u * d) @ v.T
    denom = max(np.linalg.norm(a), 1.0)
    assert np.linalg.norm(recon - a) / denom < rtol


# ---------------------------------------------------------------------------
# thin_svd
# ---------------------------------------------------------------------------

def test_identity_3x3():
    res = thin_svd(np.eye(3))
    np.testing.assert_allclose(res.d, np.ones(3), atol=1e-14)
    # u and v agree up to a shared column sign flip
    np.testing.assert_allclose(np.abs(res.u), np.eye(3), atol=1e-12)
    np.testing.assert_allclose(res.u, res.v, atol=1e-12)


def test_diagonal_3x3():
    res = thin_svd(np.diag([3.0, 2.0, 1.0]))
    np.testing.assert_allclose(res.d, [3.0, 2.0, 1.0], atol=1e-14)


def test_random_6x4_matches_jacobi_oracle():
    rng = np.random.default_rng(60406)
    a = rng.standard_normal((6, 4))
    expected = np.sqrt(np.clip(jacobi_eigvals(a.T @ a), 0.0, None))
    res = thin_svd(a)
    np.testing.assert_allclose(res.d, expected, rtol=0.0, atol=1e-9)
    assert_valid_factors(a, res)


@pytest.mark.parametrize(
    "shape",
    [(1, 1), (2, 50), (8, 200), (100, 2000), (37, 64), (64, 37), (500, 12), (30, 30)],
)
def test_reconstruction_random(shape):
    rng = np.random.default_rng(hash(shape) % (2**32))
    a = rng.standard_normal(shape)
    assert_valid_factors(a, thin_svd(a))


@pytest.mark.parametrize("scale", [1e-6, 1.0, 1e6])
def test_reconstruction_scale_invariant(scale):
    rng = np.random.default_rng(7)
    a = scale * rng.standard_normal((10, 80))
    assert_valid_factors(a, thin_svd(a))


def test_rank_deficient_clamps_to_zero():
    rng = np.random.default_rng(11)
    basis = rng.standard_normal((3, 40))
    coef = rng.standard_normal((10, 3))
    a = coef @ basis  # rank 3 by construction
    res = thin_svd(a)
    assert np.all(res.d[3:] == 0.0)
    assert np.all(res.d[:3] > 0.0)
    assert_valid_factors(a, res)


def test_zero_matrix():
    a = np.zeros((3, 17))
    res = thin_svd(a)
    assert np.all(res.d == 0.0)
    assert_valid_factors(a, res)


def test_single_row():
    a = np.array([[3.0, 0.0, 4.0]])
    res = thin_svd(a)
    np.testing.assert_allclose(res.d, [5.0], atol=1e-14)
    np.testing.assert_allclose(np.abs(res.v[:, 0]), [0.6, 0.0, 0.8], atol=1e-14)


def test_singular_values_match_transpose():
    rng = np.random.default_rng(303)
    for shape in [(30, 200), (9, 9), (45, 60)]:
        a = rng.standard_normal(shape)
        d1 = thin_svd(a).d
        d2 = thin_svd(np.ascontiguousarray(a.T)).d
        np.testing.assert_allclose(d1, d2, rtol=1e-10, atol=1e-12)


def test_null_tolerance_is_relative():
    # second singular value sits below NULL_REL_TOL relative to the first
    a = np.array([[1.0, 0.0], [0.0, 0.1 * NULL_REL_TOL]])
    res = thin_svd(a)
    assert res.d[1] == 0.0


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        thin_svd(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        thin_svd(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        thin_svd(np.array([[1.0, np.inf]]))


# ---------------------------------------------------------------------------
# t_quantile
# ---------------------------------------------------------------------------

def test_median_is_zero():
    for nu in [0.5, 1.0, 3.7, 250.0]:
        assert t_quantile(0.5, nu) == pytest.approx(0.0, abs=1e-12)


def test_cauchy_closed_form():
    for p in [0.6, 0.8, 0.975, 0.995]:
        expected = math.tan(math.pi * (p - 0.5))
        assert t_quantile(p, 1.0) == pytest.approx(expected, rel=1e-10)
    assert t_quantile(0.975, 1.0) == pytest.approx(12.7062047, abs=1e-6)


def test_large_nu_matches_normal_limit():
    for p in [0.6, 0.9, 0.975]:
        assert t_quantile(p, 1e9) == pytest.approx(normal_quantile_bisect(p), abs=1e-4)


def test_odd_symmetry():
    for p in [0.55, 0.7, 0.99]:
        for nu in [0.8, 2.0, 17.3]:
            assert t_quantile(1.0 - p, nu) == pytest.approx(-t_quantile(p, nu), abs=1e-12)


@pytest.mark.parametrize("nu", [0.7, 1.0, 4.5, 33.0])
def test_density_integration_round_trip(nu):
    for p in [0.6, 0.9, 0.975]:
        q = t_quantile(p, nu)
        grid = np.linspace(-q, q, 40001)
        mass = simpson(t_density(grid, nu), grid[1] - grid[0])
        assert mass == pytest.approx(2.0 * p - 1.0, abs=1e-6)


def test_strictly_increasing_in_p():
    ps = np.linspace(0.02, 0.98, 25)
    for nu in [0.9, 3.0, 40.0]:
        q = [t_quantile(p, nu) for p in ps]
        assert np.all(np.diff(q) > 0.0)


def test_strictly_decreasing_in_nu_above_median():
    nus = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 64.0, 256.0]
    for p in [0.6, 0.9, 0.975]:
        q = [t_quantile(p, nu) for nu in nus]
        assert np.all(np.diff(q) < 0.0)


def test_fractional_nu_between_neighbors():
    # real-valued degrees of freedom interpolate monotonically
    q_lo, q_mid, q_hi = (t_quantile(0.975, nu) for nu in (5.0, 5.5, 6.0))
    assert q_hi < q_mid < q_lo


def test_domain_errors():
    for p in [0.0, 1.0, -0.2, 1.7, np.nan]:
        with pytest.raises(ValueError):
            t_quantile(p, 5.0)
    for nu in [0.0, -3.0, np.nan]:
        with pytest.raises(ValueError):
            t_quantile(0.9, nu)
