"""Exact covariance reference: dense computation, no sketching.

Given the full n x p Jacobian J, the inverse covariance of a prediction is

    Sigma^-1 = (J^T J + lam I)^-1 (J^T J) (J^T J + lam I)^-1

which via a thin SVD J = U diag(d) V^T reduces to
V diag(d^2 / (d^2 + lam)^2) V^T.  The effective parameter count is
p* = Tr(2H - H^2) with H = J (J^T J + lam I)^-1 J^T, i.e.
p* = sum_j (2 h_j - h_j^2), h_j = d_j^2 / (d_j^2 + lam).

This is the quadratic-cost path: dense SVD of the full Jacobian and a dense
p x p matrix.  It exists to calibrate the sketched path on problems small
enough to afford it, so it refuses inputs beyond a hard size gate rather
than silently melting the machine.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .delta import IntervalReport
from .errors import (
    DataError,
    DegreesOfFreedomError,
    ExactSizeError,
    SingularCovarianceError,
)
from .linalg import t_quantile, thin_svd
from .nn import Mlp
from .validation import check_matrix, check_probability, check_vector

MAX_EXACT_PARAMS = 5000
MAX_EXACT_ROWS = 50000

# relative cutoff below which a singular value counts as zero for the
# purpose of declaring J^T J singular at lam = 0
_SINGULAR_REL_TOL = 1e-10


@dataclass(frozen=True)
class ExactCovariance:
    """Dense inverse covariance with its effective dof and noise scale."""

    sigma_inv: np.ndarray
    p_star: float
    s_hat: float
    n: int

    @property
    def p(self) -> int:
        return self.sigma_inv.shape[0]

    @property
    def dof(self) -> float:
        return self.n - self.p_star


def exact_covariance(j, lam: float, residuals) -> ExactCovariance:
    """Dense Sigma^-1, p*, and s_hat from the full Jacobian.

    Raises ExactSizeError beyond the size gate, SingularCovarianceError when
    lam = 0 and J lacks full column rank, DegreesOfFreedomError when
    n - p* <= 0.
    """
    j = check_matrix(j, "jacobian")
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0.0:
        raise ValueError(f"lam must be finite and >= 0, got {lam}")
    residuals = check_vector(residuals, "residuals")
    n, p = j.shape
    if p > MAX_EXACT_PARAMS or n > MAX_EXACT_ROWS:
        raise ExactSizeError(
            f"jacobian is {n} x {p}; the exact path is gated at "
            f"{MAX_EXACT_ROWS} rows / {MAX_EXACT_PARAMS} parameters"
        )
    if residuals.shape[0] != n:
        raise DataError(
            f"got {residuals.shape[0]} residuals for {n} jacobian rows"
        )
    svd = thin_svd(j)
    d2 = svd.d * svd.d
    if lam == 0.0:
        d_max = svd.d[0] if svd.d.size else 0.0
        rank_ok = svd.d.size == p and np.all(svd.d > _SINGULAR_REL_TOL * d_max)
        if not rank_ok:
            raise SingularCovarianceError(
                "J^T J is singular and lam = 0: inverse covariance undefined"
            )
    den = d2 + lam
    # den > 0 is now guaranteed: lam > 0, or every d2 > 0
    w = d2 / den**2
    sigma_inv = (svd.v * w) @ svd.v.T
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    h = d2 / den
    p_star = float(np.sum(2.0 * h - h * h))
    # n - p* can legitimately hit zero here (J square and full rank); the
    # covariance and p* are still well defined, only s_hat is not.  Interval
    # construction rejects dof <= 0, not this constructor.
    if n - p_star > 0.0:
        s_hat = float(np.sqrt(np.sum(residuals * residuals) / (n - p_star)))
    else:
        s_hat = float("nan")
    return ExactCovariance(sigma_inv=sigma_inv, p_star=p_star, s_hat=s_hat, n=n)


def exact_quad_form(exact: ExactCovariance, g0) -> float:
    g0 = check_vector(g0, "g0", length=exact.p)
    return max(float(g0 @ exact.sigma_inv @ g0), 0.0)


def exact_interval(net: Mlp, exact: ExactCovariance, x0, alpha: float) -> IntervalReport:
    alpha = check_probability(alpha, "alpha")
    x0 = check_vector(x0, "x0", length=net.n_inputs)
    if exact.dof <= 0.0:
        raise DegreesOfFreedomError(
            f"n - p* = {exact.dof:.6g} <= 0: too few rows for the effective "
            f"parameter count; refuse to produce intervals"
        )
    center = net.forward(x0)
    q = exact_quad_form(exact, net.param_gradient(x0))
    t = t_quantile(1.0 - alpha / 2.0, exact.dof)
    half = t * exact.s_hat * float(np.sqrt(1.0 + q))
    return IntervalReport(
        center=center, lower=center - half, upper=center + half,
        half_width=half, alpha=alpha,
    )


def linreg_interval(x_design, y, x0, alpha: float) -> IntervalReport:
    """Textbook OLS prediction interval, the classical special case.

    x_design is n x (m+1) with a leading all-ones column; x0 is the raw
    feature vector of length m (the dummy 1 is prepended here).  Uses the
    t distribution on n - m - 1 degrees of freedom.
    """
    x_design = check_matrix(x_design, "x_design")
    y = check_vector(y, "y")
    alpha = check_probability(alpha, "alpha")
    n, cols = x_design.shape
    if y.shape[0] != n:
        raise DataError(f"got {y.shape[0]} targets for {n} design rows")
    if not np.all(x_design[:, 0] == 1.0):
        raise DataError("x_design must carry a leading all-ones column")
    x0 = check_vector(x0, "x0", length=cols - 1)
    if n <= cols:
        raise DegreesOfFreedomError(
            f"OLS interval needs n > {cols} rows, got {n}"
        )
    xtx = x_design.T @ x_design
    if np.linalg.matrix_rank(x_design) < cols:
        raise SingularCovarianceError("design matrix is rank deficient")
    xty = x_design.T @ y
    beta = np.linalg.solve(xtx, xty)
    resid = y - x_design @ beta
    dof = n - cols
    s_hat = float(np.sqrt(resid @ resid / dof))
    x0d = np.concatenate(([1.0], x0))
    q = float(x0d @ np.linalg.solve(xtx, x0d))
    center = float(x0d @ beta)
    t = t_quantile(1.0 - alpha / 2.0, dof)
    half = t * s_hat * float(np.sqrt(1.0 + q))
    return IntervalReport(
        center=center, lower=center - half, upper=center + half,
        half_width=half, alpha=alpha,
    )
