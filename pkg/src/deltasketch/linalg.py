"""Dense matrix primitives: thin SVD and Student-t quantiles.

The SVD here is tuned for the shapes this package actually sees: short-fat
sketch buffers (2k x m with k much smaller than m) and modestly sized
Jacobians.  Short-fat (or tall-thin) inputs go through an eigendecomposition
of the small Gram matrix, which only ever touches min(rows, cols)-sized
factors; anything close to square falls back to LAPACK's standard SVD.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import stats

from .errors import SvdConvergenceError
from .validation import check_matrix, check_probability

# Singular values below this fraction of the largest are treated as exact
# zeros; their right vectors are rebuilt by orthogonal completion.
NULL_REL_TOL = 1e-12

# Aspect ratio (long side / short side) above which the Gram-matrix path
# is used instead of LAPACK's SVD.
_GRAM_ASPECT = 4.0


class ThinSvd(NamedTuple):
    """Factors of ``a = u @ diag(d) @ v.T`` with r = min(rows, cols).

    ``u`` is rows x r, ``d`` is length r sorted non-increasing and
    non-negative, ``v`` is cols x r with orthonormal columns.
    """

    u: np.ndarray
    d: np.ndarray
    v: np.ndarray


def thin_svd(a) -> ThinSvd:
    """Thin singular value decomposition of a dense matrix.

    Singular values below ``NULL_REL_TOL`` times the largest are clamped to
    zero and their singular vectors replaced by an orthogonal completion, so
    the returned bases are always orthonormal even for rank-deficient input.

    Raises
    ------
    SvdConvergenceError
        If the underlying eigensolver or SVD fails to converge.
    ValueError
        If ``a`` is not a finite 2-D matrix.
    """
    a = check_matrix(a, "a")
    n, m = a.shape
    if n <= m:
        u, d, v = _svd_short_fat(a)
    else:
        vt, d, ut = _svd_short_fat(np.ascontiguousarray(a.T))
        u, v = ut, vt
    return ThinSvd(u, d, v)


def _svd_short_fat(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD of an n x m matrix with n <= m; returns (u, d, v)."""
    n, m = a.shape
    if m >= _GRAM_ASPECT * n:
        return _gram_svd(a)
    try:
        u, d, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - backend dependent
        raise SvdConvergenceError(f"SVD did not converge: {exc}", detail=str(exc)) from exc
    v = np.ascontiguousarray(vt.T)
    d = d.copy()
    dmax = d[0] if d.size else 0.0
    null = d < NULL_REL_TOL * dmax
    if null.any():
        d[null] = 0.0
    return u, d, v


def _gram_svd(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD of a short-fat matrix via eigendecomposition of a @ a.T.

    Right singular vectors are recovered as a.T @ u / d, which loses
    orthogonality for small singular values (the Gram matrix squares the
    condition number), so the recovered block is re-orthonormalized with a
    sign-fixed QR pass.
    """
    n, m = a.shape
    gram = a @ a.T
    try:
        w, u = np.linalg.eigh(gram)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - backend dependent
        raise SvdConvergenceError(
            f"Gram eigendecomposition did not converge: {exc}", detail=str(exc)
        ) from exc
    w = np.clip(w[::-1], 0.0, None)
    u = np.ascontiguousarray(u[:, ::-1])
    # eigh resolves eigenvalues only to ~eps * w_max, so exact zeros surface
    # as sqrt(eps)-level singular values; clamp below the standard rank
    # tolerance n * eps * w_max in the eigenvalue domain.
    w_floor = w[0] * n * np.finfo(np.float64).eps if w.size else 0.0
    d = np.sqrt(w)
    dmax = d[0] if d.size else 0.0
    keep = (w > w_floor) & (d > NULL_REL_TOL * dmax) if dmax > 0.0 else np.zeros(n, dtype=bool)
    d[~keep] = 0.0
    v = np.zeros((m, n))
    if keep.any():
        v[:, keep] = (a.T @ u[:, keep]) / d[keep]
    _complete_columns(v, np.flatnonzero(~keep))
    # Sign-fixed QR keeps each column aligned with its input while restoring
    # orthonormality lost in the d-division above.
    q, r = np.linalg.qr(v)
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    v = q * signs[None, :]
    return u, d, np.ascontiguousarray(v)


def _complete_columns(v: np.ndarray, empty: np.ndarray) -> None:
    """Fill ``v[:, empty]`` with unit vectors orthogonal to all other columns.

    Candidates are canonical basis vectors taken in index order, so the
    completion is deterministic.
    """
    if empty.size == 0:
        return
    m = v.shape[0]
    filled = [v[:, j] for j in range(v.shape[1]) if j not in set(empty.tolist())]
    got = 0
    for i in range(m):
        if got == empty.size:
            return
        cand = np.zeros(m)
        cand[i] = 1.0
        for col in filled:
            cand -= (col @ cand) * col
        nrm = np.linalg.norm(cand)
        if nrm > 1e-6:
            cand /= nrm
            v[:, empty[got]] = cand
            filled.append(cand)
            got += 1
    if got < empty.size:  # pragma: no cover - cannot happen for valid shapes
        raise SvdConvergenceError("orthogonal completion exhausted the basis")


def t_quantile(p: float, nu: float) -> float:
    """Quantile of Student's t distribution with real-valued ``nu`` > 0.

    ``nu`` is allowed to be non-integer because effective degrees of freedom
    n - p* are generally fractional.
    """
    p = check_probability(p, "p")
    nu = float(nu)
    if not nu > 0.0:
        raise ValueError(f"degrees of freedom must be positive, got {nu}")
    return float(stats.t.ppf(p, df=nu))
