"""Shared test helpers: independent reference implementations and builders.

Reference routines here are deliberately written from scratch against plain
numpy so they share no code with the package under test.
"""
import math

import numpy as np

# one "[acceptance] ..." line per acceptance check, echoed as a summary
# section so the gate's verdict survives pytest's output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance gate")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def sign_fix(v: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    v = np.array(v, dtype=np.float64, copy=True)
    for j in range(v.shape[1]):
        i = int(np.argmax(np.abs(v[:, j])))
        if v[i, j] < 0.0:
            v[:, j] = -v[:, j]
    return v


def low_rank_matrix(rng: np.random.Generator, n: int, m: int, rank: int) -> np.ndarray:
    left = rng.standard_normal((n, rank))
    right = rng.standard_normal((rank, m))
    return left @ right


def rfd_reference(rows, k: int):
    """Plain robust Frequent Directions over a finished list of rows.

    Buffer of 2k live rows; when full, shrink the top k directions by the
    k-th singular value squared and bank half of it as a ridge shift.  Zero
    rows carry no information and are skipped, matching the write-into-the-
    first-zero-slot semantics of the streaming sketch.

    Returns (d, v, lambda_n) with d of length k and v of shape m x k.
    """
    rows = [np.asarray(r, dtype=np.float64) for r in rows]
    m = rows[0].shape[0]

    def compress(buf, shift):
        a = np.vstack(buf)
        _, s, vt = np.linalg.svd(a, full_matrices=False)
        delta = s[k - 1]
        out = []
        for i in range(k):
            w = math.sqrt(max(s[i] ** 2 - delta**2, 0.0))
            if w > 0.0:
                out.append(w * vt[i])
        return out, shift + 0.5 * delta * delta

    buf: list[np.ndarray] = []
    shift = 0.0
    for row in rows:
        if not np.any(row):
            continue
        buf.append(row)
        if len(buf) == 2 * k:
            buf, shift = compress(buf, shift)
    if len(buf) > k:
        buf, shift = compress(buf, shift)
    stack = [np.zeros(m)] * k
    stack[: len(buf)] = buf
    _, s, vt = np.linalg.svd(np.vstack(stack), full_matrices=False)
    return s[:k], vt[:k].T, shift
