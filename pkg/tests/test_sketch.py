import numpy as np
import pytest
from conftest import low_rank_matrix, rfd_reference, sign_fix

from deltasketch.errors import DataError
from deltasketch.sketch import (
    RidSketch,
    load_result,
    result_from_bytes,
    result_to_bytes,
    save_result,
    score_values,
    sketch_stream,
)


def stream_matrix(a: np.ndarray, k: int, **kw) -> "RidSketch":
    state = RidSketch(k, a.shape[1], **kw)
    for row in a:
        state.update(row)
    return state


# ---------------------------------------------------------------------------
# score function
# ---------------------------------------------------------------------------

def test_covariance_score_hand_values():
    d = np.array([10.0, 1.2, 0.9, 0.1])
    got = score_values(d, "covariance", lam=1.0)
    expected = d**2 / (d**2 + 1.0) ** 2
    np.testing.assert_allclose(got, expected, rtol=1e-15)
    np.testing.assert_allclose(got, [0.0098, 0.2419, 0.2472, 0.0098], atol=5e-5)
    # the score peaks at d^2 = lam, so 0.9 outranks both 1.2 and 10; with
    # lam=1 the values 10 and 0.1 score identically (x/(1+x)^2 is symmetric
    # under x -> 1/x on the squared singular value)
    assert got[2] > got[1] > got[0]
    assert got[0] == pytest.approx(got[3], rel=1e-12)


def test_magnitude_score_is_identity():
    d = np.array([3.0, 1.0, 0.5])
    np.testing.assert_array_equal(score_values(d, "magnitude"), d)


def test_covariance_score_zero_lambda():
    got = score_values(np.array([2.0, 0.0]), "covariance", lam=0.0)
    np.testing.assert_allclose(got, [0.25, 0.0])


def test_score_rejects_unknown_kind():
    with pytest.raises(ValueError):
        score_values(np.array([1.0]), "entropy")


# ---------------------------------------------------------------------------
# update
# ---------------------------------------------------------------------------

def test_rows_stored_verbatim_below_capacity():
    state = RidSketch(2, 3)
    r1 = np.array([1.0, 2.0, 3.0])
    r2 = np.array([-1.0, 0.5, 0.0])
    state.update(r1)
    state.update(r2)
    assert state.fill == 2
    assert state.lambda_acc == 0.0
    buf = state.buffer()
    np.testing.assert_array_equal(buf[0], r1)
    np.testing.assert_array_equal(buf[1], r2)
    np.testing.assert_array_equal(buf[2:], 0.0)


def test_first_compression_hand_case():
    # k=1, rows (1,0) and (0,1): singular values (1,1), tie selects index 0,
    # delta=1, the survivor shrinks to zero, and half of delta^2 is banked
    state = RidSketch(1, 2)
    state.update(np.array([1.0, 0.0]))
    state.update(np.array([0.0, 1.0]))
    assert state.fill == 0
    assert state.lambda_acc == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_array_equal(state.buffer(), 0.0)
    res = state.finalize()
    np.testing.assert_allclose(res.d, [0.0], atol=1e-15)
    assert res.lambda_n == pytest.approx(0.5, abs=1e-15)
    assert res.n_rows == 2


def test_covariance_selection_keeps_mid_spectrum():
    # spectrum (10, 1.2, 0.9, 0.1) with lam=1: the two best-scoring
    # directions are 0.9 and 1.2; the dominant direction 10 is discarded
    svals = [10.0, 1.2, 0.9, 0.1]
    state = RidSketch(2, 5, score="covariance", lam=1.0)
    for i, s in enumerate(svals):
        row = np.zeros(5)
        row[i] = s
        state.update(row)
    # delta = min(0.9, 1.2) = 0.9; survivors: sqrt(1.2^2-0.9^2) along e1
    assert state.lambda_acc == pytest.approx(0.5 * 0.9**2, abs=1e-12)
    assert state.fill == 1
    buf = state.buffer()
    expected = np.zeros(5)
    expected[1] = np.sqrt(1.2**2 - 0.9**2)
    np.testing.assert_allclose(np.abs(buf[0]), expected, atol=1e-10)
    np.testing.assert_array_equal(buf[1:], 0.0)


def test_zero_rows_are_no_ops():
    rng = np.random.default_rng(42)
    a = rng.standard_normal((30, 6))
    plain = stream_matrix(a, 2).finalize()

    state = RidSketch(2, 6)
    for i, row in enumerate(a):
        state.update(row)
        if i % 3 == 0:
            state.update(np.zeros(6))
    padded = state.finalize()

    np.testing.assert_array_equal(plain.d, padded.d)
    np.testing.assert_array_equal(plain.v, padded.v)
    assert plain.lambda_n == padded.lambda_n
    assert padded.n_rows == 30 + 10


def test_update_rejects_bad_rows():
    state = RidSketch(2, 3)
    with pytest.raises(ValueError):
        state.update(np.ones(4))
    with pytest.raises(ValueError):
        state.update(np.array([1.0, np.nan, 0.0]))


def test_constructor_validation():
    with pytest.raises(ValueError):
        RidSketch(0, 3)
    with pytest.raises(ValueError):
        RidSketch(4, 3)
    with pytest.raises(ValueError):
        RidSketch(2, 3, score="best")
    with pytest.raises(ValueError):
        RidSketch(2, 3, lam=-1.0)


# ---------------------------------------------------------------------------
# compression internals
# ---------------------------------------------------------------------------

def test_deflation_energy_and_orthogonality():
    rng = np.random.default_rng(7)
    k, m = 4, 30
    a = rng.standard_normal((2 * k, m))
    state = stream_matrix(a, k)
    # one compression just ran
    assert state.fill <= k
    s_ref = np.linalg.svd(a, compute_uv=False)
    delta = s_ref[k - 1]
    assert state.lambda_acc == pytest.approx(0.5 * delta**2, rel=1e-12)
    buf = state.buffer()[: state.fill]
    expected_norms = np.sqrt(np.clip(s_ref[:k] ** 2 - delta**2, 0.0, None))
    got_norms = np.linalg.norm(buf, axis=1)
    np.testing.assert_allclose(got_norms, expected_norms[: state.fill], atol=1e-10)
    gram = buf @ buf.T
    off = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off)) < 1e-10


def test_lambda_acc_monotone():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((50, 8))
    state = RidSketch(3, 8)
    seen = [0.0]
    for row in a:
        state.update(row)
        assert state.lambda_acc >= seen[-1]
        seen.append(state.lambda_acc)
    assert state.lambda_acc > 0.0


# ---------------------------------------------------------------------------
# finalize / sketch_stream
# ---------------------------------------------------------------------------

def test_under_capacity_is_exact():
    rng = np.random.default_rng(12)
    k, m = 4, 9
    for n in [1, k - 1, k]:
        a = rng.standard_normal((n, m))
        res = stream_matrix(a, k).finalize()
        assert res.lambda_n == 0.0
        approx = (res.v * res.d**2) @ res.v.T
        np.testing.assert_allclose(approx, a.T @ a, atol=1e-10)


def test_orthogonal_rows_recovered_exactly():
    q, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((7, 3)))
    rows = (q * np.array([3.0, 2.0, 1.0])).T  # 3 orthogonal rows in R^7
    res = stream_matrix(rows, 3).finalize()
    assert res.lambda_n == 0.0
    np.testing.assert_allclose(res.d, [3.0, 2.0, 1.0], atol=1e-12)
    np.testing.assert_allclose((res.v * res.d**2) @ res.v.T, rows.T @ rows, atol=1e-10)


def test_finalize_compresses_overfull_buffer():
    rng = np.random.default_rng(8)
    k, m = 3, 10
    a = rng.standard_normal((k + 2, m))  # fill k < 5 <= 2k
    state = stream_matrix(a, k)
    assert state.fill == k + 2
    res = state.finalize()
    assert res.lambda_n > 0.0  # one compression ran inside finalize
    assert res.d.shape == (k,)
    # and the live state was not disturbed
    assert state.fill == k + 2
    assert state.lambda_acc == 0.0


def test_finalize_is_repeatable_and_non_destructive():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((25, 6))
    state = stream_matrix(a, 2)
    first = state.finalize()
    second = state.finalize()
    np.testing.assert_array_equal(first.d, second.d)
    np.testing.assert_array_equal(first.v, second.v)
    assert first.lambda_n == second.lambda_n


def test_finalize_empty_stream_errors():
    with pytest.raises(DataError):
        RidSketch(2, 4).finalize()
    with pytest.raises(DataError):
        sketch_stream(iter([]), k=2)


def test_sketch_stream_equals_fold_then_finalize():
    rng = np.random.default_rng(21)
    a = rng.standard_normal((40, 11))
    via_stream = sketch_stream(iter(a), k=3)
    via_fold = stream_matrix(a, 3).finalize()
    np.testing.assert_array_equal(via_stream.d, via_fold.d)
    np.testing.assert_array_equal(via_stream.v, via_fold.v)
    assert via_stream.lambda_n == via_fold.lambda_n
    assert via_stream.n_rows == 40


def test_zero_stream():
    res = sketch_stream(iter(np.zeros((7, 5))), k=2)
    np.testing.assert_array_equal(res.d, 0.0)
    assert res.lambda_n == 0.0
    assert res.n_rows == 7


def test_low_rank_recovered_exactly():
    rng = np.random.default_rng(77)
    a = low_rank_matrix(rng, 200, 50, rank=5)
    res = sketch_stream(iter(a), k=10)
    assert res.lambda_n == 0.0
    err = np.linalg.norm(res.approx_gram() - a.T @ a, 2)
    assert err < 1e-8


def test_permutation_invariant_above_rank():
    rng = np.random.default_rng(123)
    a = low_rank_matrix(rng, 60, 18, rank=5)
    base = sketch_stream(iter(a), k=10).approx_gram()
    for seed in [1, 2, 3]:
        perm = np.random.default_rng(seed).permutation(60)
        shuffled = sketch_stream(iter(a[perm]), k=10).approx_gram()
        np.testing.assert_allclose(shuffled, base, atol=1e-8)
    np.testing.assert_allclose(base, a.T @ a, atol=1e-8)


# ---------------------------------------------------------------------------
# agreement with plain robust Frequent Directions under the magnitude score
# ---------------------------------------------------------------------------

@pytest.mark.parametrize(
    "n,m,k,seed,with_zeros",
    [(37, 12, 3, 0, False), (200, 40, 7, 1, True), (25, 30, 5, 2, False)],
)
def test_magnitude_score_matches_rfd_reference(n, m, k, seed, with_zeros):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, m))
    if with_zeros:
        a[:: n // 8] = 0.0
    res = sketch_stream(iter(a), k=k)
    d_ref, v_ref, lam_ref = rfd_reference(list(a), k)
    np.testing.assert_allclose(res.d, d_ref, atol=1e-10)
    assert res.lambda_n == pytest.approx(lam_ref, abs=1e-10)
    # columns compare up to sign; skip directions with zero strength, whose
    # basis is arbitrary
    live = res.d > 1e-10 * max(res.d[0], 1.0)
    np.testing.assert_allclose(
        sign_fix(res.v[:, live]), sign_fix(v_ref[:, live]), atol=1e-8
    )


def test_spectral_bound_on_random_instances():
    # Frequent Directions style guarantee, checked on flat-spectrum Gaussian
    # instances with min(n, m) well above k:
    # ||A^T A - (B^T B + lambda_n I)||_2 <= ||A - A_k||_F^2 / k
    # The shrink here subtracts the k-th (smallest retained) singular value,
    # which is more aggressive than variants shrinking by the (k+1)-th, so
    # this /k form is not a theorem for every matrix; on spectra decaying
    # steeply, or with k near min(n, m)/2, the ratio can exceed 1.  See
    # test_shift_bound_always_holds for the bound that holds unconditionally.
    rng = np.random.default_rng(2024)
    for _ in range(100):
        k = int(rng.integers(3, 13))
        m = int(rng.integers(5 * k, 9 * k))
        n = int(rng.integers(6 * k, 12 * k))
        a = rng.standard_normal((n, m))
        res = sketch_stream(iter(a), k=k)
        lhs = np.linalg.norm(res.approx_gram() - a.T @ a, 2)
        svals = np.linalg.svd(a, compute_uv=False)
        rhs = float(np.sum(svals[k:] ** 2)) / k
        assert lhs <= rhs + 1e-9


def test_spectral_bound_50x20():
    rng = np.random.default_rng(50)
    a = rng.standard_normal((50, 20))
    res = sketch_stream(iter(a), k=5)
    lhs = np.linalg.norm(res.approx_gram() - a.T @ a, 2)
    svals = np.linalg.svd(a, compute_uv=False)
    assert lhs <= float(np.sum(svals[5:] ** 2)) / 5


@pytest.mark.parametrize(
    "n,m,k,seed,decay",
    [(50, 20, 10, 50, None), (50, 20, 10, 50, 1.0), (100, 40, 8, 1, 1.0),
     (60, 30, 14, 2, None), (200, 50, 10, 3, 2.0)],
)
def test_shift_bound_always_holds(n, m, k, seed, decay):
    # Provable for the smallest-retained shrink: each compression's error
    # operator lies between 0 and delta^2 I, so centering with the shift
    # gives ||A^T A - (B^T B + lambda_n I)||_2 <= lambda_n; and the mass
    # argument projected on any top-j subspace gives
    # lambda_n <= ||A - A_j||_F^2 / (2 (k - j)) for every j < k.
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, m))
    if decay is not None:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
        a = (u * np.arange(1, s.size + 1, dtype=float) ** (-decay)) @ vt
    res = sketch_stream(iter(a), k=k)
    lhs = np.linalg.norm(res.approx_gram() - a.T @ a, 2)
    assert lhs <= res.lambda_n + 1e-9
    sv2 = np.linalg.svd(a, compute_uv=False) ** 2
    total = float(np.sum(sv2))
    for j in range(k):
        tail_j = total - float(np.sum(sv2[:j]))
        assert res.lambda_n <= tail_j / (2 * (k - j)) + 1e-9


def test_covariance_score_error_recorded_not_bounded():
    # no formal guarantee is claimed for the non-monotone covariance score;
    # just confirm the approximation error stays finite and sane
    rng = np.random.default_rng(31)
    a = rng.standard_normal((80, 15))
    res = sketch_stream(iter(a), k=5, score="covariance", lam=0.5)
    err = np.linalg.norm(res.approx_gram() - a.T @ a, 2)
    assert np.isfinite(err)
    assert err < np.linalg.norm(a.T @ a, 2)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_round_trip_bytes_bit_exact():
    rng = np.random.default_rng(99)
    a = rng.standard_normal((33, 14))
    res = sketch_stream(iter(a), k=4, score="covariance", lam=0.3)
    back = result_from_bytes(result_to_bytes(res))
    assert back.d.tobytes() == res.d.tobytes()
    assert back.v.tobytes() == np.ascontiguousarray(res.v).tobytes()
    assert back.lambda_n == res.lambda_n
    assert back.n_rows == res.n_rows


def test_round_trip_file(tmp_path):
    rng = np.random.default_rng(100)
    res = sketch_stream(iter(rng.standard_normal((20, 9))), k=3)
    path = tmp_path / "sketch.rids"
    save_result(res, path)
    back = load_result(path)
    assert back.d.tobytes() == res.d.tobytes()
    assert back.v.tobytes() == np.ascontiguousarray(res.v).tobytes()
    assert back.lambda_n == res.lambda_n


def test_container_header_layout():
    rng = np.random.default_rng(1)
    res = sketch_stream(iter(rng.standard_normal((10, 6))), k=2)
    buf = result_to_bytes(res)
    assert buf[:4] == b"RIDS"
    assert len(buf) == 40 + 8 * res.k + 8 * res.m * res.k


def test_container_rejects_corruption():
    rng = np.random.default_rng(2)
    res = sketch_stream(iter(rng.standard_normal((10, 6))), k=2)
    buf = bytearray(result_to_bytes(res))
    with pytest.raises(DataError):
        result_from_bytes(bytes(buf[:10]))
    bad_magic = b"XXXX" + bytes(buf[4:])
    with pytest.raises(DataError):
        result_from_bytes(bad_magic)
    bad_version = bytes(buf[:4]) + (99).to_bytes(4, "little") + bytes(buf[8:])
    with pytest.raises(DataError):
        result_from_bytes(bad_version)
    with pytest.raises(DataError):
        result_from_bytes(bytes(buf) + b"\x00")
