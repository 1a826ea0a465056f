"""Solver behavior: convergence, equivalences, recurrences, replacement."""

import math

import numpy as np
import pytest

from pipesafe.linalg import NonFiniteVectorError, csr_from_coo, gen_poisson, spmv
from pipesafe.reduction import PartitionPlan, ReductionEngine, verify_phase_order
from pipesafe.solvers import (
    METHODS,
    SolveStatus,
    SolverConfig,
    solve,
    solve_bicgstab,
    solve_gpbicg,
    solve_pbicgsafe,
    solve_ssbicgsafe2,
    write_history_csv,
)

ALL_METHODS = sorted(METHODS)


def _system(dim=2, k=20):
    A, _ = gen_poisson(dim, k)
    b = spmv(A, np.ones(A.n_rows))
    return A, b


def test_unknown_method_rejected():
    A, b = _system(1, 4)
    with pytest.raises(ValueError):
        solve(A, b, method="gmres")


def test_shape_validation():
    A, b = _system(1, 4)
    rect = csr_from_coo(2, 3, np.array([0]), np.array([0]), np.array([1.0]))
    with pytest.raises(ValueError):
        solve(rect, np.ones(2))
    with pytest.raises(ValueError):
        solve(A, np.ones(3))
    with pytest.raises(ValueError):
        solve(A, b, x0=np.ones(5))


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolverConfig(rr_epoch=0)
    with pytest.raises(ValueError):
        SolverConfig(max_iters=10, rr_cutoff=11)
    with pytest.raises(ValueError):
        SolverConfig(monitor_every=-1)


@pytest.mark.parametrize("method", ALL_METHODS)
def test_identity_converges_immediately(method):
    n = 12
    A = csr_from_coo(n, n, np.arange(n), np.arange(n), np.ones(n))
    rng = np.random.default_rng(55)
    b = rng.standard_normal(n)
    out = solve(A, b, method=method)
    assert out.status is SolveStatus.CONVERGED
    assert out.iterations <= 2
    np.testing.assert_allclose(out.x, b, rtol=1e-12)


@pytest.mark.parametrize("method", ALL_METHODS)
def test_zero_rhs_converges_at_zero(method):
    A, _ = gen_poisson(1, 8)
    out = solve(A, np.zeros(8), method=method)
    assert out.status is SolveStatus.CONVERGED
    assert out.iterations == 0
    assert out.r0_norm == 0.0
    assert out.history[0].rel_res_recur == 0.0
    np.testing.assert_array_equal(out.x, np.zeros(8))


@pytest.mark.parametrize("method", ALL_METHODS)
@pytest.mark.parametrize("dim,k", [(1, 64), (2, 16), (3, 7)])
def test_grid_convergence(method, dim, k):
    A, b = _system(dim, k)
    cfg = SolverConfig(tol=1e-9, max_iters=2000, rr_epoch=20)
    out = solve(A, b, method=method, config=cfg)
    assert out.status is SolveStatus.CONVERGED, (method, dim, k, out.status)
    # certificate: the true residual agrees with the claimed convergence
    true_rel = np.linalg.norm(b - spmv(A, out.x)) / out.r0_norm
    assert true_rel <= 10.0 * cfg.tol


@pytest.mark.parametrize("method", ALL_METHODS)
def test_nonzero_initial_guess(method):
    A, b = _system(2, 10)
    rng = np.random.default_rng(56)
    x0 = rng.standard_normal(A.n_rows)
    out = solve(A, b, method=method, x0=x0, config=SolverConfig(tol=1e-9, max_iters=1000))
    assert out.status is SolveStatus.CONVERGED
    np.testing.assert_allclose(out.x, np.ones(A.n_rows), atol=1e-6)


def test_history_starts_at_one_for_zero_guess():
    A, b = _system(2, 8)
    for method in ALL_METHODS:
        out = solve(A, b, method=method)
        assert out.history[0].iter == 0
        assert out.history[0].rel_res_recur == pytest.approx(1.0)


# -- cross-method equivalences ------------------------------------------------


def test_gpbicg_stabilized_coefficients_reproduce_bicgstab():
    # with zeta = (At,t)/(At,At), eta = 0 the three-phase iterates
    # coincide with the two-phase method's in exact arithmetic
    A, b = _system(2, 30)
    cfg = SolverConfig(tol=1e-30, max_iters=10)
    o1 = solve_bicgstab(A, b, config=cfg)
    o2 = solve_gpbicg(A, b, config=cfg, _stab_coeffs=True)
    assert o1.status is SolveStatus.MAX_ITERS and o2.status is SolveStatus.MAX_ITERS
    for r1, r2 in zip(o1.history, o2.history):
        assert r2.rel_res_recur == pytest.approx(r1.rel_res_recur, rel=1e-10), r1.iter


def test_pipelined_matches_sequential_single_reduction():
    # same iterates in exact arithmetic; rounding drift stays tiny early on
    A, b = _system(2, 30)
    cfg = SolverConfig(tol=1e-30, max_iters=20)
    o1 = solve_ssbicgsafe2(A, b, config=cfg)
    o2 = solve_pbicgsafe(A, b, config=cfg)
    for r1, r2 in zip(o1.history, o2.history):
        assert r2.rel_res_recur == pytest.approx(r1.rel_res_recur, rel=1e-6), r1.iter


# -- recurrence fidelity ------------------------------------------------------


def test_pipelined_recurrences_track_true_products():
    A, b = _system(2, 20)
    norm_a = np.max(np.sum(np.abs(A.to_dense()), axis=1))
    failures = []

    def hook(i, ws):
        if i > 30:
            return
        for carried, source in (("s", "r"), ("q", "o"), ("w", "u"), ("l", "t"), ("g", "y")):
            true = spmv(A, ws[source])
            err = np.linalg.norm(ws[carried] - true)
            scale = 1.0 + norm_a * np.linalg.norm(ws[source])
            if err > 1e-8 * scale:
                failures.append((i, carried, err, scale))

    solve_pbicgsafe(A, b, config=SolverConfig(tol=1e-12, max_iters=31), trace_hook=hook)
    assert not failures, failures[:5]


# -- residual replacement -----------------------------------------------------


def test_replacement_schedule_and_flags():
    A, b = _system(2, 25)
    cfg = SolverConfig(tol=1e-30, max_iters=35, rr_epoch=10, monitor_every=1)
    out = solve(A, b, method="pbicgsafe-rr", config=cfg)
    flagged = [rec.iter for rec in out.history if rec.replaced]
    # fires at i = 10, 20, 30; the recomputed residual shows on the next record
    assert flagged == [11, 21, 31]


def test_replacement_gap_is_exactly_zero():
    A, b = _system(2, 25)
    cfg = SolverConfig(tol=1e-30, max_iters=25, rr_epoch=10, monitor_every=1)
    out = solve(A, b, method="pbicgsafe-rr", config=cfg)
    by_iter = {d.iter: d for d in out.drift}
    flagged = [rec.iter for rec in out.history if rec.replaced]
    assert flagged
    for it in flagged:
        assert by_iter[it].gap == 0.0  # bitwise: recomputed residual, same dot


def test_replacement_respects_cutoff():
    A, b = _system(2, 25)
    cfg = SolverConfig(tol=1e-30, max_iters=35, rr_epoch=10, rr_cutoff=15)
    out = solve(A, b, method="pbicgsafe-rr", config=cfg)
    flagged = [rec.iter for rec in out.history if rec.replaced]
    assert flagged == [11]  # 20 and 30 are at or past the cutoff


def test_plain_pipelined_never_replaces():
    A, b = _system(2, 25)
    cfg = SolverConfig(tol=1e-30, max_iters=25, rr_epoch=5)
    out = solve(A, b, method="pbicgsafe", config=cfg)
    assert not any(rec.replaced for rec in out.history)


# -- termination paths --------------------------------------------------------


@pytest.mark.parametrize("method", ALL_METHODS)
def test_max_iters_outcome(method):
    A, b = _system(2, 25)
    cfg = SolverConfig(tol=1e-14, max_iters=5)
    out = solve(A, b, method=method, config=cfg)
    assert out.status is SolveStatus.MAX_ITERS
    assert out.iterations == 5
    assert len(out.history) == 6  # one record per check, plus the final state
    assert out.history[-1].iter == 5
    assert out.best_rel_res_recur <= 1.0
    assert math.isfinite(out.final_rel_res_recur)


@pytest.mark.parametrize("method", ALL_METHODS)
def test_breakdown_reported(method):
    # exchange matrix with b = e1: (r0*, A r0) = 0 on the first iteration
    A = csr_from_coo(2, 2, np.array([0, 1]), np.array([1, 0]), np.array([1.0, 1.0]))
    b = np.array([1.0, 0.0])
    out = solve(A, b, method=method, config=SolverConfig(max_iters=10))
    assert out.status is SolveStatus.BREAKDOWN
    assert out.breakdown_quantity is not None
    assert out.failure_iter == 0


def test_non_finite_matrix_raises():
    A = csr_from_coo(2, 2, np.array([0, 1]), np.array([0, 1]), np.array([1.0, 1.0]))
    A.values[0] = np.nan
    with pytest.raises(NonFiniteVectorError):
        solve(A, np.ones(2), method="pbicgsafe")


def test_non_finite_rhs_rejected():
    A, _ = gen_poisson(1, 4)
    with pytest.raises(NonFiniteVectorError):
        solve(A, np.array([1.0, np.nan, 0.0, 0.0]))


# -- engine interplay ---------------------------------------------------------


@pytest.mark.parametrize("method", ALL_METHODS)
def test_threaded_engine_matches_inline_bitwise(method):
    A, b = _system(2, 15)
    cfg = SolverConfig(tol=1e-9, max_iters=500, rr_epoch=10)
    plan = PartitionPlan.balanced(A.n_rows, 3)
    with ReductionEngine(plan, mode="inline") as e1:
        o1 = solve(A, b, method=method, config=cfg, engine=e1)
    with ReductionEngine(plan, mode="threaded") as e2:
        o2 = solve(A, b, method=method, config=cfg, engine=e2)
    assert len(o1.history) == len(o2.history)
    for r1, r2 in zip(o1.history, o2.history):
        assert r1.rel_res_recur == r2.rel_res_recur, r1.iter
    np.testing.assert_array_equal(o1.x, o2.x)


@pytest.mark.parametrize("method", ALL_METHODS)
def test_event_schedule_verified(method):
    A, b = _system(2, 12)
    eng = ReductionEngine(PartitionPlan.balanced(A.n_rows, 2), mode="threaded")
    with eng:
        out = solve(A, b, method=method, config=SolverConfig(tol=1e-8), engine=eng)
    assert out.status is SolveStatus.CONVERGED
    rep = verify_phase_order(eng.log, method)
    assert rep.ok, rep.violations[:3]
    assert rep.iterations_checked >= out.iterations


# -- outputs -------------------------------------------------------------------


def test_write_history_csv_format(tmp_path):
    A, b = _system(2, 10)
    out = solve(A, b, method="pbicgsafe-rr",
                config=SolverConfig(tol=1e-10, rr_epoch=5, monitor_every=2))
    path = str(tmp_path / "h.csv")
    write_history_csv(path, out.history)
    lines = open(path).read().splitlines()
    assert lines[0] == "iter,rel_res_recur,rel_res_true,replaced"
    assert len(lines) == len(out.history) + 1
    row0 = lines[1].split(",")
    assert row0[0] == "0" and float(row0[1]) == out.history[0].rel_res_recur
    for line in lines[1:]:
        cells = line.split(",")
        assert cells[3] in ("0", "1")


def test_history_round_trips_floats(tmp_path):
    A, b = _system(2, 10)
    out = solve(A, b, method="ssbicgsafe2", config=SolverConfig(tol=1e-10))
    path = str(tmp_path / "h.csv")
    write_history_csv(path, out.history)
    for line, rec in zip(open(path).read().splitlines()[1:], out.history):
        assert float(line.split(",")[1]) == rec.rel_res_recur  # .17g round-trips


def test_coefficients_recorded():
    A, b = _system(2, 10)
    out = solve(A, b, method="ssbicgsafe2", config=SolverConfig(tol=1e-10))
    completed = [rec for rec in out.history if rec.coefficients is not None]
    assert completed
    first = completed[0]
    assert first.coefficients.beta == 0.0  # no previous direction yet
    assert first.coefficients.eta == 0.0
