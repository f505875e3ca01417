"""Low-rank parameter covariance and delta-method prediction intervals.

Starting from a sketch of the Jacobian (k directions v with strengths d and
ridge shift lambda_n), the inverse covariance of predictions is approximated
in the retained basis by the diagonal

    d_sigma_inv[j] = (d_j^2 + lambda_n) / (d_j^2 + lambda_n + lambda)^2

together with the effective parameter count p* = sum_j (2 h_j - h_j^2),
h_j = (d_j^2 + lambda_n) / (d_j^2 + lambda_n + lambda), and the residual
scale s_hat^2 = sum r_i^2 / (n - p*).  A prediction interval at x0 is then

    f(x0) +- t_{1-alpha/2, n-p*} * s_hat * sqrt(1 + g0^T Sigma^-1 g0).

By default only the k retained directions enter the quadratic form and p*,
which is the literal low-rank reading.  The sketch's own semantics
(J^T J ~= V diag(d^2) V^T + lambda_n I) imply mass off the retained subspace
too; the opt-in complement flag adds c * ||(I - V V^T) g0||^2 with
c = lambda_n / (lambda_n + lambda)^2 to the quadratic form and
(m - k) * (2 h_c - h_c^2), h_c = lambda_n / (lambda_n + lambda), to p*.
Both variants are explicit; nothing is chosen silently.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegreesOfFreedomError, SingularCovarianceError
from .linalg import t_quantile
from .nn import Mlp
from .sketch import SketchResult
from .validation import check_probability, check_vector

MODEL_MAGIC = b"CVMD"
MODEL_VERSION = 1


@dataclass(frozen=True)
class CovarianceModel:
    """Finished low-rank covariance: basis, diagonal, p*, and noise scale."""

    v: np.ndarray
    d: np.ndarray
    lambda_n: float
    lam: float
    d_sigma_inv: np.ndarray
    p_star: float
    s_hat: float
    n_train: int
    complement: bool = False

    @property
    def k(self) -> int:
        return self.d.shape[0]

    @property
    def m(self) -> int:
        return self.v.shape[0]

    @property
    def dof(self) -> float:
        return self.n_train - self.p_star


@dataclass(frozen=True)
class IntervalReport:
    center: float
    lower: float
    upper: float
    half_width: float
    alpha: float


def _complement_coef(lambda_n: float, lam: float) -> float:
    total = lambda_n + lam
    if total == 0.0:
        return 0.0
    return lambda_n / total**2


def build_covariance(
    sk: SketchResult, lam: float, residuals, complement: bool = False
) -> CovarianceModel:
    """Turn a finalized sketch plus training residuals into a covariance model.

    Raises
    ------
    SingularCovarianceError
        If lam + lambda_n = 0 while some retained singular value is zero.
    DegreesOfFreedomError
        If n - p* <= 0, in which case no interval is defensible.
    """
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0.0:
        raise ValueError(f"lam must be finite and >= 0, got {lam}")
    residuals = check_vector(residuals, "residuals")
    n = residuals.shape[0]
    if n == 0:
        raise DataError("residuals are empty")
    d2 = sk.d * sk.d
    shift_total = sk.lambda_n + lam
    if shift_total == 0.0 and np.any(sk.d == 0.0):
        raise SingularCovarianceError(
            "covariance is singular: lam = lambda_n = 0 with a zero singular value"
        )
    num = d2 + sk.lambda_n
    den = d2 + shift_total
    d_sigma_inv = num / den**2
    d_h = num / den
    p_star = float(np.sum(2.0 * d_h - d_h * d_h))
    if complement:
        h_c = sk.lambda_n / shift_total if shift_total > 0.0 else 0.0
        p_star += (sk.m - sk.k) * (2.0 * h_c - h_c * h_c)
    if n - p_star <= 0.0:
        raise DegreesOfFreedomError(
            f"n - p* = {n - p_star:.6g} <= 0: too few rows for the effective "
            f"parameter count; refuse to produce intervals"
        )
    s_hat = float(np.sqrt(np.sum(residuals * residuals) / (n - p_star)))
    return CovarianceModel(
        v=sk.v,
        d=sk.d.copy(),
        lambda_n=float(sk.lambda_n),
        lam=lam,
        d_sigma_inv=d_sigma_inv,
        p_star=p_star,
        s_hat=s_hat,
        n_train=n,
        complement=bool(complement),
    )


def quad_form(model: CovarianceModel, g0) -> float:
    """g0^T Sigma^-1 g0 in the retained basis (plus optional complement)."""
    g0 = check_vector(g0, "g0", length=model.m)
    proj = model.v.T @ g0
    q = float(model.d_sigma_inv @ (proj * proj))
    if model.complement:
        rest = float(g0 @ g0 - proj @ proj)
        q += _complement_coef(model.lambda_n, model.lam) * max(rest, 0.0)
    return max(q, 0.0)


def quad_form_batch(model: CovarianceModel, g: np.ndarray) -> np.ndarray:
    """quad_form for each row of g, shape (n_points, m)."""
    proj = g @ model.v
    q = (proj * proj) @ model.d_sigma_inv
    if model.complement:
        rest = np.sum(g * g, axis=1) - np.sum(proj * proj, axis=1)
        q = q + _complement_coef(model.lambda_n, model.lam) * np.clip(rest, 0.0, None)
    return np.clip(q, 0.0, None)


def predict_interval(net: Mlp, model: CovarianceModel, x0, alpha: float) -> IntervalReport:
    alpha = check_probability(alpha, "alpha")
    x0 = check_vector(x0, "x0", length=net.n_inputs)
    center = net.forward(x0)
    q = quad_form(model, net.param_gradient(x0))
    t = t_quantile(1.0 - alpha / 2.0, model.dof)
    half = t * model.s_hat * float(np.sqrt(1.0 + q))
    return IntervalReport(
        center=center, lower=center - half, upper=center + half,
        half_width=half, alpha=alpha,
    )


def predict_intervals(net: Mlp, model: CovarianceModel, x: np.ndarray,
                      alpha: float, block_size: int = 512):
    """Vectorized intervals for each row of x: (centers, half_widths)."""
    alpha = check_probability(alpha, "alpha")
    centers = net.forward_batch(x)
    t = t_quantile(1.0 - alpha / 2.0, model.dof)
    halves = np.empty_like(centers)
    for start in range(0, x.shape[0], block_size):
        g = net.param_gradient_batch(x[start : start + block_size])
        q = quad_form_batch(model, g)
        halves[start : start + block_size] = t * model.s_hat * np.sqrt(1.0 + q)
    return centers, halves


# ---------------------------------------------------------------------------
# serialization: "CVMD" container, little-endian, bit-exact round-trip
# ---------------------------------------------------------------------------

_MODEL_HEAD = struct.Struct("<4sIQQddddQI")

_FLAG_COMPLEMENT = 1


def model_to_bytes(model: CovarianceModel) -> bytes:
    flags = _FLAG_COMPLEMENT if model.complement else 0
    head = _MODEL_HEAD.pack(
        MODEL_MAGIC, MODEL_VERSION, model.m, model.k, model.lam,
        model.lambda_n, model.p_star, model.s_hat, model.n_train, flags,
    )
    d = np.ascontiguousarray(model.d, dtype="<f8").tobytes()
    dsi = np.ascontiguousarray(model.d_sigma_inv, dtype="<f8").tobytes()
    v = np.ascontiguousarray(model.v, dtype="<f8").tobytes()
    return head + d + dsi + v


def model_from_bytes(buf: bytes) -> CovarianceModel:
    if len(buf) < _MODEL_HEAD.size:
        raise DataError("covariance container truncated")
    magic, version, m, k, lam, lambda_n, p_star, s_hat, n, flags = _MODEL_HEAD.unpack_from(buf)
    if magic != MODEL_MAGIC:
        raise DataError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise DataError(f"unsupported covariance container version {version}")
    expect = _MODEL_HEAD.size + 8 * (k + k + m * k)
    if len(buf) != expect:
        raise DataError(f"covariance container has {len(buf)} bytes, expected {expect}")
    off = _MODEL_HEAD.size
    d = np.frombuffer(buf, dtype="<f8", count=k, offset=off).copy()
    off += 8 * k
    dsi = np.frombuffer(buf, dtype="<f8", count=k, offset=off).copy()
    off += 8 * k
    v = np.frombuffer(buf, dtype="<f8", count=m * k, offset=off).reshape(m, k).copy()
    if not all(np.isfinite(a).all() for a in (d, dsi, v)):
        raise DataError("covariance container holds non-finite values")
    return CovarianceModel(
        v=v, d=d, lambda_n=lambda_n, lam=lam, d_sigma_inv=dsi,
        p_star=p_star, s_hat=s_hat, n_train=n,
        complement=bool(flags & _FLAG_COMPLEMENT),
    )


def save_model(model: CovarianceModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> CovarianceModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
