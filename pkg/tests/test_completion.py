"""Completion engine tests.

The shrinkage step is checked against a brute-force dense proximal
oracle, the power adaptation against a standalone rule simulator, and
the full loops against synthetic problems whose minimizer is known.
"""

import csv

import numpy as np
import pytest

from lowrank.completion import (
    CompletionResult,
    SvtParams,
    SvtState,
    TraceRecord,
    adapt_power,
    mae,
    read_factor_mm,
    read_factors,
    recycle_q,
    recycle_u,
    shrink,
    svt_fast,
    svt_reference,
    write_factor_mm,
    write_factors,
    write_trace_csv,
)
from lowrank.errors import DataError, RankDeficiencyError
from lowrank.linalg import SvdResult, oracle_svd
from lowrank.rng import RngState
from lowrank.rsvd import RsvdParams, rsvd_bki
from lowrank.sparse import ObservationSet, SparseMatrix

from helpers import dense_as_sparse, haar_basis


# ------------------------------------------------------------- oracles

def prox_oracle(Yd, tau):
    """Dense proximal operator of tau * nuclear norm, by full SVD."""
    U, S, Vt = np.linalg.svd(Yd, full_matrices=False)
    keep = np.maximum(S - tau, 0.0)
    return (U * keep) @ Vt


def simulate_power(errs, p0=3, p_min=1):
    """Standalone transcription of the power-adjustment rule."""
    p, streak, last = p0, 0, None
    out = []
    for e in errs:
        if last is not None and e > last:
            p += 1
            streak = 0
        else:
            streak += 1
            if streak == 10:
                p = max(p_min, p - 1)
                streak = 0
        last = e
        out.append(p)
    return out


def observe(M, density, seed):
    """Bernoulli-sample entries of a dense matrix into an ObservationSet."""
    rng = np.random.default_rng(seed)
    mask = rng.random(M.shape) < density
    rows, cols = np.nonzero(mask)
    return ObservationSet(M.shape[0], M.shape[1], rows, cols, M[rows, cols])


def factor_matrix(m, n, r, seed):
    """Rank-r product of standard normal factors, the scaling regime
    the default tau = 5n threshold is calibrated for."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((m, r)) @ rng.standard_normal((r, n))


# -------------------------------------------------------------- shrink

def test_shrink_crafted_values():
    rng = RngState(0)
    U = haar_basis(rng, 20, 3)
    V = haar_basis(rng, 15, 3)
    svd = SvdResult(U, np.array([10.0, 6.0, 2.0]), V, "descending")
    Us, Ss, Vs, r = shrink(svd, 5.0)
    assert r == 2
    np.testing.assert_allclose(Ss, [5.0, 1.0])
    assert Us.shape == (20, 2) and Vs.shape == (15, 2)


def test_shrink_all_below_threshold_is_empty_not_error():
    rng = RngState(1)
    svd = SvdResult(haar_basis(rng, 8, 2), np.array([3.0, 1.0]), haar_basis(rng, 6, 2), "descending")
    Us, Ss, Vs, r = shrink(svd, 12.0)
    assert r == 0
    assert Us.shape == (8, 0) and Ss.shape == (0,) and Vs.shape == (6, 0)


def test_shrink_matches_dense_prox_oracle():
    """Reconstruction from the shrunk factors equals the brute-force
    proximal operator on a dense 50x40 matrix."""
    for seed in range(5):
        rng = np.random.default_rng(seed)
        Yd = rng.standard_normal((50, 40)) * 4.0
        tau = 3.0
        Us, Ss, Vs, r = shrink(oracle_svd(Yd), tau)
        X = (Us * Ss) @ Vs.T if r else np.zeros_like(Yd)
        np.testing.assert_allclose(X, prox_oracle(Yd, tau), atol=1e-8)


def test_shrink_rejects_ascending_input():
    rng = RngState(2)
    svd = SvdResult(haar_basis(rng, 6, 2), np.array([1.0, 2.0]), haar_basis(rng, 5, 2), "ascending")
    with pytest.raises(ValueError, match="descending"):
        shrink(svd, 0.5)


# ----------------------------------------------------------------- mae

def test_mae_trivial():
    assert mae([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    assert mae([0.0, 2.0], [1.0, 0.0]) == pytest.approx(1.5)


def test_mae_matches_recomputation():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal(500), rng.standard_normal(500)
    assert mae(a, b) == pytest.approx(float(np.mean(np.abs(a - b))), rel=1e-12)


def test_mae_empty_rejected():
    with pytest.raises(ValueError, match="empty"):
        mae(np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError, match="mismatch"):
        mae(np.zeros(3), np.zeros(4))


# --------------------------------------------------------- adapt_power

def test_power_bumps_on_error_increase():
    state = SvtState(Y=None, p=3)
    adapt_power(state, 0.5)
    assert state.p == 3
    adapt_power(state, 0.6)
    assert state.p == 4 and state.streak == 0


def test_power_retires_after_ten_decreases():
    state = SvtState(Y=None, p=4)
    errs = [0.5 / (j + 1) for j in range(10)]
    for j, e in enumerate(errs):
        adapt_power(state, e)
        if j < 9:
            assert state.p == 4
    assert state.p == 3


def test_power_floor_at_p_min():
    state = SvtState(Y=None, p=1)
    for e in [0.9 - 0.01 * j for j in range(25)]:
        adapt_power(state, e)
    assert state.p == 1


def test_power_twenty_step_fixture():
    errs = [0.9, 0.8, 0.85, 0.7, 0.6, 0.5, 0.4, 0.35, 0.3, 0.25,
            0.2, 0.18, 0.15, 0.16, 0.1, 0.09, 0.08, 0.07, 0.06, 0.05]
    expected = [3, 3, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4, 3, 4, 4, 4, 4, 4, 4, 4]
    state = SvtState(Y=None, p=3)
    got = [adapt_power(state, e) for e in errs]
    assert got == expected
    assert got == simulate_power(errs)


def test_power_simulator_agreement_on_random_walks():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        errs = np.abs(np.cumprod(1.0 + 0.2 * rng.standard_normal(40))).tolist()
        state = SvtState(Y=None, p=3)
        assert [adapt_power(state, e) for e in errs] == simulate_power(errs)


# ------------------------------------------------------------ recycling

def _decaying_sparse(seed, m=80, n=60):
    rng = np.random.default_rng(seed)
    spec = 50.0 * (2.0 ** -(np.arange(n) / 4.0))
    X = (rng.standard_normal((m, n)) * spec) @ haar_basis(RngState(seed), n, n).T
    return X, dense_as_sparse(X)


def test_recycle_q_fixed_point():
    """With Y unchanged since the sketch, restarting from the cached
    basis reproduces the randomized SVD result exactly."""
    _, A = _decaying_sparse(0)
    res, sub = rsvd_bki(A, RsvdParams(k=6, p=2, s=4, seed=9))
    again = recycle_q(sub, A, 6)
    np.testing.assert_allclose(again.S, res.S, rtol=1e-10)
    np.testing.assert_allclose(again.reconstruct(), res.reconstruct(), atol=1e-10)


def test_recycle_q_error_grows_with_drift():
    X, A = _decaying_sparse(1)
    res, sub = rsvd_bki(A, RsvdParams(k=6, p=2, s=4, seed=4))
    rng = np.random.default_rng(11)
    noise = rng.standard_normal(X.shape)
    errs = []
    for t in [0.01, 0.3, 3.0]:
        Yp = dense_as_sparse(X + t * noise)
        ref = oracle_svd(Yp.densify()).truncate(6).reconstruct()
        got = recycle_q(sub, Yp, 6).reconstruct()
        errs.append(np.linalg.norm(got - ref) / np.linalg.norm(ref))
    assert errs[0] < errs[-1]
    assert errs[0] < 1e-3


def test_recycle_q_rank_zero_and_width_guard():
    _, A = _decaying_sparse(2)
    res, sub = rsvd_bki(A, RsvdParams(k=4, p=1, s=3, seed=0))
    empty = recycle_q(sub, A, 0)
    assert empty.S.size == 0 and empty.U.shape[1] == 0
    with pytest.raises(ValueError, match="width"):
        recycle_q(sub, A, sub.Q.shape[1] + 1)


def test_recycle_u_consistent_case():
    """Y exactly factored by the cached U: the three-step update
    recovers the decomposition."""
    rng = RngState(5)
    m, n, k = 70, 50, 5
    Uo, Vo = haar_basis(rng, m, k), haar_basis(rng, n, k)
    So = np.array([40.0, 30.0, 22.0, 14.0, 8.0])
    Y = dense_as_sparse((Uo * So) @ Vo.T)
    out = recycle_u(Uo, Y)
    np.testing.assert_allclose(out.S, So, rtol=1e-8)
    np.testing.assert_allclose(out.reconstruct(), Y.densify(), atol=1e-8)


def test_recycle_u_with_oracle_subspace():
    # cached U spanning the true dominant subspace loses nothing
    X, A = _decaying_sparse(6)
    full = oracle_svd(X)
    k = 5
    out = recycle_u(full.U[:, :k].copy(), A)
    ref = full.truncate(k)
    np.testing.assert_allclose(out.S, ref.S, rtol=1e-8)
    np.testing.assert_allclose(out.reconstruct(), ref.reconstruct(), atol=1e-8 * ref.S[0])


def test_recycle_u_annihilates_orthogonal_cache():
    rng = RngState(7)
    m, n, k = 60, 40, 4
    basis = haar_basis(rng, m, 2 * k)
    Uy, Uperp = basis[:, :k], basis[:, k:]
    Vo = haar_basis(rng, n, k)
    Y = dense_as_sparse((Uy * np.array([30.0, 20.0, 10.0, 5.0])) @ Vo.T)
    out = recycle_u(Uperp, Y)
    assert out.S.max() < 1e-9


def test_recycle_u_zero_projection_advises_refresh():
    rng = np.random.default_rng(8)
    Z = np.zeros((12, 9))
    Z[6:, :] = rng.standard_normal((6, 9))
    E = np.zeros((12, 3))
    E[0, 0] = E[1, 1] = E[2, 2] = 1.0
    with pytest.raises(RankDeficiencyError, match="refresh"):
        recycle_u(E, dense_as_sparse(Z))


def test_recycle_q_beats_recycle_u_after_drift():
    """The wider cached basis tracks a drifted iterate better than the
    k-column one, median over seeds."""
    q_errs, u_errs = [], []
    for seed in range(10):
        X, A = _decaying_sparse(seed, m=70, n=50)
        k = 5
        res, sub = rsvd_bki(A, RsvdParams(k=k, p=2, s=4, seed=seed))
        rng = np.random.default_rng(100 + seed)
        Yp = dense_as_sparse(X + 0.5 * rng.standard_normal(X.shape))
        ref = oracle_svd(Yp.densify()).truncate(k).reconstruct()
        scale = np.linalg.norm(ref)
        got_q = recycle_q(sub, Yp, k).reconstruct()
        got_u = recycle_u(res.U, Yp).reconstruct()
        q_errs.append(np.linalg.norm(got_q - ref) / scale)
        u_errs.append(np.linalg.norm(got_u - ref) / scale)
    assert np.median(q_errs) <= np.median(u_errs)


# ------------------------------------------------------------ svt loops

def test_svt_params_validation():
    with pytest.raises(ValueError, match="tau"):
        SvtParams(tau=-1.0)
    with pytest.raises(ValueError, match="epsilon"):
        SvtParams(epsilon=1.5)
    with pytest.raises(ValueError, match="strategy"):
        SvtParams(strategy="reuse-x")
    with pytest.raises(ValueError, match="delta"):
        SvtParams(delta=0.0)
    with pytest.raises(ValueError, match="l must"):
        SvtParams(l=0)


def test_svt_rank_one_full_sampling():
    """Fully observed rank-1 matrix: the loop contracts geometrically
    onto it."""
    rng = RngState(10)
    u = haar_basis(rng, 20, 1)
    v = haar_basis(rng, 20, 1)
    M = 8.0 * u @ v.T
    obs = observe(M, 1.1, 0)  # density > 1 observes everything
    res = svt_reference(obs, SvtParams(epsilon=1e-4, seed=1), backend="oracle")
    assert res.converged
    assert res.rank == 1
    rel = np.linalg.norm(res.reconstruct() - M) / np.linalg.norm(M)
    assert rel < 1e-3


def test_svt_reference_oracle_recovers_synthetic():
    M = factor_matrix(100, 100, 5, seed=20)
    obs = observe(M, 0.4, 21)
    res = svt_reference(obs, SvtParams(epsilon=1e-4, seed=2), backend="oracle")
    assert res.converged and res.iterations < 350
    rel = np.linalg.norm(res.reconstruct() - M) / np.linalg.norm(M)
    assert rel < 1e-2
    assert np.all(res.S > 0)
    assert res.U.shape == (100, res.rank) and res.V.shape == (100, res.rank)


def test_svt_trace_shape_and_progress():
    M = factor_matrix(100, 100, 5, seed=22)
    obs = observe(M, 0.4, 23)
    res = svt_reference(obs, SvtParams(epsilon=1e-4, seed=3), backend="oracle")
    tr = res.trace
    assert len(tr) == res.iterations
    assert tr[0].iteration == 1
    # the recorded k is the post-escalation rank: it starts at the
    # previous r plus one and grows in steps of l
    prev_r = 0
    for t in tr:
        assert t.k >= min(prev_r + 1, 100)
        assert (t.k - (prev_r + 1)) % 5 == 0 or t.k == 100
        assert 0 <= t.r <= t.k
        prev_r = t.r
    assert tr[49].residual < tr[4].residual
    assert all(t.wall_time >= 0 for t in tr)
    assert res.svd_time + res.update_time <= res.total_time + 1e-6


def test_svt_bki_backend_matches_oracle_quality():
    M = factor_matrix(100, 100, 5, seed=22)
    obs = observe(M, 0.4, 23)
    ref = svt_reference(obs, SvtParams(epsilon=1e-3, seed=4), backend="oracle")
    got = svt_reference(obs, SvtParams(epsilon=1e-3, seed=4), backend="rsvd-bki")
    assert got.converged
    rel_ref = np.linalg.norm(ref.reconstruct() - M) / np.linalg.norm(M)
    rel_got = np.linalg.norm(got.reconstruct() - M) / np.linalg.norm(M)
    assert rel_got < 2 * rel_ref + 1e-3


def test_svt_fast_none_trace_identical_to_reference_bki():
    """Recycling disabled, same seed: the fast loop IS the reference
    BKI loop, trace for trace."""
    M = factor_matrix(90, 80, 4, seed=26)
    obs = observe(M, 0.4, 27)
    params = SvtParams(epsilon=2e-3, seed=5, strategy="none", i_reuse=10)
    a = svt_reference(obs, params, backend="rsvd-bki")
    b = svt_fast(obs, params)
    assert len(a.trace) == len(b.trace)
    for ta, tb in zip(a.trace, b.trace):
        assert (ta.iteration, ta.k, ta.r, ta.p, ta.q, ta.svd_source) == (
            tb.iteration, tb.k, tb.r, tb.p, tb.q, tb.svd_source)
        assert ta.residual == tb.residual


def test_svt_trace_power_column_follows_rule():
    # p recorded in the trace must replay the adjustment rule applied
    # to the trace's own residuals, one iteration behind
    M = factor_matrix(90, 90, 4, seed=28)
    obs = observe(M, 0.4, 29)
    res = svt_reference(obs, SvtParams(epsilon=1e-3, seed=6, p0=3), backend="rsvd-bki")
    resids = [t.residual for t in res.trace]
    expected = [3] + simulate_power(resids[:-1], p0=3)
    assert [t.p for t in res.trace] == expected[: len(res.trace)]


def test_svt_fast_reuse_q_converges_loose():
    M = factor_matrix(100, 100, 5, seed=20)
    obs = observe(M, 0.4, 21)
    ref = svt_fast(obs, SvtParams(epsilon=1e-2, seed=7, strategy="none"))
    res = svt_fast(obs, SvtParams(epsilon=1e-2, seed=7, strategy="reuse-q", i_reuse=25))
    assert res.converged
    assert "recycle-q" in {t.svd_source for t in res.trace}
    rel = np.linalg.norm(res.reconstruct() - M) / np.linalg.norm(M)
    rel_ref = np.linalg.norm(ref.reconstruct() - M) / np.linalg.norm(M)
    assert rel < 3 * rel_ref + 5e-3


def test_svt_fast_reuse_u_converges_while_recycling():
    """The cheap strategy is only trustworthy once the iterate has
    settled, so point it at the tail of the run and require it to
    finish there."""
    M = factor_matrix(100, 100, 5, seed=20)
    obs = observe(M, 0.4, 21)
    res = svt_fast(obs, SvtParams(epsilon=1.21e-2, seed=7, strategy="reuse-u", i_reuse=45))
    assert res.converged
    assert res.trace[-1].svd_source == "recycle-u"
    rel = np.linalg.norm(res.reconstruct() - M) / np.linalg.norm(M)
    assert rel < 3e-2


def test_svt_fast_q_counter_respects_budget():
    M = factor_matrix(100, 100, 5, seed=32)
    obs = observe(M, 0.4, 33)
    res = svt_fast(obs, SvtParams(epsilon=1e-2, seed=8, strategy="reuse-q",
                                  i_reuse=20, q_reuse=4))
    assert all(t.q <= 4 for t in res.trace)
    # budget exhaustion forces periodic fresh sketches after warmup
    fresh_after = [t for t in res.trace if t.iteration > 20 and t.svd_source == "bki"]
    assert fresh_after, "expected forced refreshes"


def test_svt_escalation_hard_stop_flagged():
    # full-rank target with a threshold below its entire spectrum:
    # escalation must hit min(m, n) and say so instead of spinning
    M = np.random.default_rng(34).standard_normal((30, 25))
    obs = observe(M, 1.1, 35)
    res = svt_reference(obs, SvtParams(tau=1e-9, epsilon=0.9, i_max=3, seed=9),
                        backend="oracle")
    assert res.hard_stops >= 1
    assert np.all(res.S > 0)
    assert any("min(m, n)" in e for e in res.events)


def test_svt_not_converged_flagged_not_raised():
    M = factor_matrix(60, 60, 4, seed=36)
    obs = observe(M, 0.4, 37)
    res = svt_reference(obs, SvtParams(epsilon=1e-6, i_max=4, seed=10), backend="oracle")
    assert not res.converged
    assert res.iterations == 4


def test_svt_empty_observations_rejected():
    obs = ObservationSet(10, 10, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))
    with pytest.raises(DataError, match="no observed"):
        svt_reference(obs, SvtParams(), backend="oracle")
    zero = ObservationSet(10, 10, np.array([1]), np.array([2]), np.array([0.0]))
    with pytest.raises(DataError, match="zero"):
        svt_reference(zero, SvtParams(), backend="oracle")


def test_svt_predict_matches_reconstruct():
    M = factor_matrix(50, 40, 3, seed=38)
    obs = observe(M, 0.5, 39)
    res = svt_reference(obs, SvtParams(epsilon=1e-3, seed=11), backend="oracle")
    rng = np.random.default_rng(40)
    r = rng.integers(0, 50, 30)
    c = rng.integers(0, 40, 30)
    np.testing.assert_allclose(res.predict(r, c), res.reconstruct()[r, c], atol=1e-12)


def test_svt_iterate_shares_pattern_with_observations(monkeypatch):
    """The loop's sparse iterate must reuse the observation pattern
    arrays and never reallocate them."""
    import lowrank.completion as comp
    M = factor_matrix(40, 40, 3, seed=41)
    obs = observe(M, 0.5, 42)
    phi = obs.train_matrix()
    seen = {}
    orig = comp.update_pattern_values

    def spy(Y, delta):
        seen.setdefault("indptr", Y.indptr)
        seen.setdefault("indices", Y.indices)
        seen.setdefault("data_id", id(Y.data))
        assert id(Y.indptr) == id(seen["indptr"])
        assert id(Y.data) == seen["data_id"]
        return orig(Y, delta)

    monkeypatch.setattr(comp, "update_pattern_values", spy)
    res = svt_reference(obs, SvtParams(epsilon=1e-2, i_max=40, seed=12), backend="oracle")
    assert len(res.trace) >= 3
    assert seen["indptr"].shape == phi.indptr.shape


# --------------------------------------------------------- serialization

def test_trace_csv_round_trip(tmp_path):
    tr = [TraceRecord(1, 1, 0, 3, 0, 0.9, "bki", 0.01),
          TraceRecord(2, 6, 4, 3, 1, 0.5, "recycle-q", 0.002)]
    path = tmp_path / "trace.csv"
    write_trace_csv(str(path), tr)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert rows[0]["iteration"] == "1" and rows[1]["svd_source"] == "recycle-q"
    assert float(rows[1]["residual"]) == pytest.approx(0.5)


def test_factor_container_round_trip(tmp_path):
    rng = np.random.default_rng(43)
    res = CompletionResult(
        U=rng.standard_normal((12, 3)), S=np.array([5.0, 2.0, 1.0]),
        V=rng.standard_normal((9, 3)), rank=3, iterations=7, converged=True,
        residual=0.01, trace=[], events=[], svd_time=0.0, update_time=0.0,
        total_time=0.0)
    path = tmp_path / "factors.bin"
    write_factors(str(path), res)
    U, S, V = read_factors(str(path))
    np.testing.assert_array_equal(U, res.U)
    np.testing.assert_array_equal(S, res.S)
    np.testing.assert_array_equal(V, res.V)


def test_factor_container_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(DataError, match="magic"):
        read_factors(str(path))


def test_factor_mm_round_trip(tmp_path):
    rng = np.random.default_rng(44)
    X = rng.standard_normal((7, 4))
    path = tmp_path / "U.mtx"
    write_factor_mm(str(path), X)
    back = read_factor_mm(str(path))
    np.testing.assert_allclose(back, X, rtol=0, atol=0)
    first = open(path).readline()
    assert first.startswith("%%MatrixMarket matrix array")
