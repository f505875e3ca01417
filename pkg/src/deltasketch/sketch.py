"""Streaming low-rank sketch of a row-streamed matrix.

Maintains a 2k x m buffer of rows.  Whenever the buffer fills, it is
compressed: an SVD splits the buffer into directions, a score function picks
the k directions worth keeping, and the energy of the weakest kept direction
is subtracted from the survivors and moved into an accumulated ridge shift
``lambda_acc``.  The final output approximates the Gram matrix of the full
stream as V diag(d^2) V^T + lambda_n I.

Two scores are supported.  ``magnitude`` keeps the largest singular values
and reproduces robust Frequent Directions exactly.  ``covariance`` scores a
direction by its weight in a ridge-regularized inverse covariance,
score(d) = d^2 / (d^2 + lam)^2, which peaks at d^2 = lam and therefore
prefers mid-magnitude directions over the very largest ones.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .linalg import thin_svd
from .validation import check_vector

MAGIC = b"RIDS"
FORMAT_VERSION = 1

SCORE_KINDS = ("magnitude", "covariance")


def score_values(d: np.ndarray, score: str, lam: float = 0.0) -> np.ndarray:
    """Selection score of each singular value, higher is better.

    ``magnitude`` returns the singular value itself.  ``covariance`` returns
    d^2 / (d^2 + lam)^2; a zero singular value scores zero even when lam = 0.
    """
    d = np.asarray(d, dtype=np.float64)
    if score == "magnitude":
        return d.copy()
    if score == "covariance":
        num = d * d
        den = (num + lam) ** 2
        out = np.zeros_like(num)
        np.divide(num, den, out=out, where=den > 0.0)
        return out
    raise ValueError(f"unknown score kind {score!r}")


@dataclass(frozen=True)
class SketchResult:
    """Finalized sketch: k directions, their strengths, and the ridge shift.

    The implied approximation of the streamed matrix's Gram product A^T A is
    ``v @ diag(d**2) @ v.T + lambda_n * I``.
    """

    d: np.ndarray
    v: np.ndarray
    lambda_n: float
    n_rows: int

    @property
    def k(self) -> int:
        return self.d.shape[0]

    @property
    def m(self) -> int:
        return self.v.shape[0]

    def approx_gram(self) -> np.ndarray:
        """Dense m x m approximation V diag(d^2) V^T + lambda_n I."""
        g = (self.v * (self.d * self.d)) @ self.v.T
        g[np.diag_indices_from(g)] += self.lambda_n
        return g


class RidSketch:
    """Score-driven streaming sketch with a fixed 2k x m buffer.

    Parameters
    ----------
    k : int
        Target rank of the sketch, 1 <= k <= m.
    m : int
        Row width.
    score : str
        "magnitude" or "covariance".
    lam : float
        Regularizer passed to the covariance score; ignored by magnitude.

    Updates must be applied sequentially (the compression schedule is order
    dependent); the instance may move between threads between updates.
    """

    def __init__(self, k: int, m: int, score: str = "magnitude", lam: float = 0.0):
        k = int(k)
        m = int(m)
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if m < k:
            raise ValueError(f"row width m={m} must be >= k={k}")
        if score not in SCORE_KINDS:
            raise ValueError(f"score must be one of {SCORE_KINDS}, got {score!r}")
        lam = float(lam)
        if not np.isfinite(lam) or lam < 0.0:
            raise ValueError(f"lam must be finite and >= 0, got {lam}")
        self.k = k
        self.m = m
        self.score = score
        self.lam = lam
        # single preallocated block, reused across compressions
        self._b = np.zeros((2 * k, m))
        self._fill = 0
        self._lambda_acc = 0.0
        self._n_rows = 0

    @property
    def fill(self) -> int:
        return self._fill

    @property
    def lambda_acc(self) -> float:
        return self._lambda_acc

    @property
    def n_rows(self) -> int:
        return self._n_rows

    def buffer(self) -> np.ndarray:
        """Copy of the current 2k x m buffer."""
        return self._b.copy()

    def copy(self) -> "RidSketch":
        dup = RidSketch(self.k, self.m, score=self.score, lam=self.lam)
        dup._b[:] = self._b
        dup._fill = self._fill
        dup._lambda_acc = self._lambda_acc
        dup._n_rows = self._n_rows
        return dup

    def update(self, row: np.ndarray) -> None:
        """Consume one row; compress if the buffer becomes full.

        The row is written into the first all-zero buffer row, so an all-zero
        input row leaves the buffer unchanged (it carries no information).
        """
        row = check_vector(row, "row", length=self.m)
        self._n_rows += 1
        if not row.any():
            return
        self._b[self._fill] = row
        self._fill += 1
        if self._fill == 2 * self.k:
            self._compress()

    def _compress(self) -> None:
        """One shrink step: SVD, score-based top-k selection, deflation.

        delta is the smallest singular value among the selected k.  Under a
        non-monotone score a selected value can be smaller than delta; the
        max(s^2 - delta^2, 0) clamp then zeroes it, exactly as specified.
        """
        k = self.k
        fac = thin_svd(self._b)
        d, v = fac.d, fac.v
        scores = score_values(d, self.score, self.lam)
        # top-k by score; ties prefer the larger singular value, then the
        # lower original index
        order = np.lexsort((np.arange(d.size), -d, -scores))
        sel = order[:k]
        delta = float(d[sel].min())
        shrunk = np.sqrt(np.clip(d[sel] ** 2 - delta * delta, 0.0, None))
        put = np.lexsort((sel, -shrunk))
        sel, shrunk = sel[put], shrunk[put]
        n_keep = int(np.count_nonzero(shrunk))
        self._b[:] = 0.0
        self._b[:n_keep] = shrunk[:n_keep, None] * v[:, sel[:n_keep]].T
        self._lambda_acc += 0.5 * delta * delta
        self._fill = n_keep

    def finalize(self) -> SketchResult:
        """Produce the rank-k result without disturbing the stream state.

        A buffer holding more than k live rows is compressed once first;
        returning the leading k rows verbatim would silently drop real rows.
        """
        if self._n_rows == 0:
            raise DataError("cannot finalize a sketch that consumed no rows")
        work = self
        if self._fill > self.k:
            work = self.copy()
            work._compress()
        fac = thin_svd(work._b[: self.k])
        return SketchResult(
            d=fac.d, v=fac.v, lambda_n=work._lambda_acc, n_rows=self._n_rows
        )


def sketch_stream(rows, k: int, score: str = "magnitude", lam: float = 0.0) -> SketchResult:
    """Sketch an iterable of equal-width rows; equivalent to update-fold then
    finalize."""
    state = None
    for row in rows:
        if state is None:
            row = check_vector(row, "row")
            state = RidSketch(k, row.shape[0], score=score, lam=lam)
        state.update(row)
    if state is None:
        raise DataError("cannot sketch an empty stream")
    return state.finalize()


# ---------------------------------------------------------------------------
# serialization: "RIDS" container, little-endian, bit-exact round-trip
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIQQQd")


def result_to_bytes(result: SketchResult) -> bytes:
    d = np.ascontiguousarray(result.d, dtype="<f8")
    v = np.ascontiguousarray(result.v, dtype="<f8")
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, result.k, result.m, result.n_rows, result.lambda_n
    )
    return header + d.tobytes() + v.tobytes()


def result_from_bytes(buf: bytes) -> SketchResult:
    if len(buf) < _HEADER.size:
        raise DataError("sketch container truncated")
    magic, version, k, m, n_rows, lambda_n = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise DataError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported sketch container version {version}")
    expect = _HEADER.size + 8 * k + 8 * m * k
    if len(buf) != expect:
        raise DataError(f"sketch container has {len(buf)} bytes, expected {expect}")
    d = np.frombuffer(buf, dtype="<f8", count=k, offset=_HEADER.size).copy()
    v = (
        np.frombuffer(buf, dtype="<f8", count=m * k, offset=_HEADER.size + 8 * k)
        .reshape(m, k)
        .copy()
    )
    if not (np.isfinite(d).all() and np.isfinite(v).all() and np.isfinite(lambda_n)):
        raise DataError("sketch container holds non-finite values")
    return SketchResult(d=d, v=v, lambda_n=lambda_n, n_rows=n_rows)


def save_result(result: SketchResult, path) -> None:
    with open(path, "wb") as fh:
        fh.write(result_to_bytes(result))


def load_result(path) -> SketchResult:
    with open(path, "rb") as fh:
        return result_from_bytes(fh.read())
