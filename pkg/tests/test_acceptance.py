"""Acceptance gate: seven criteria, one test and one printed verdict each.

Every test prints `[acceptance] criterion N: PASS|FAIL|SKIP ...` so the
gate can be read off a plain pytest -s run.  Criteria 1 and 2 replay
published iteration counts on SuiteSparse matrices and skip with an
explanation when those files are not present (this sandbox has no
network route to fetch them; scripts/fetch_matrices.py documents how to
stage them from a networked machine).
"""

import math
from time import perf_counter

import numpy as np
import pytest

from conftest import matrix_dir
from pipesafe.coefficients import compute_zeta_eta_gpbicg, compute_zeta_eta_safe
from pipesafe.instrument import per_iteration_costs
from pipesafe.linalg import gen_poisson, spmv
from pipesafe.mmio import load_matrix_market
from pipesafe.reduction import (
    REDUCE_START,
    SPMV_END,
    PartitionPlan,
    ReductionEngine,
    verify_phase_order,
)
from pipesafe.solvers import (
    SolveStatus,
    SolverConfig,
    solve,
    solve_pbicgsafe,
    solve_ssbicgsafe2,
)

EPS = 1e-8  # published termination threshold on the relative residual
MAX_ITERS = 10_000  # published iteration cap


def _verdict(criterion: int, ok: bool, detail: str = ""):
    word = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[acceptance] criterion {criterion}: {word}{suffix}")
    assert ok, f"criterion {criterion}: {detail}"


def _skip(criterion: int, reason: str):
    print(f"[acceptance] criterion {criterion}: SKIP ({reason})")
    pytest.skip(reason)


def _load_or_skip(criterion: int, name: str):
    path = matrix_dir() / f"{name}.mtx"
    if not path.exists():
        _skip(
            criterion,
            f"{name}.mtx not present under {matrix_dir()}; this environment has "
            f"no route to the collection site. Stage the files with "
            f"scripts/fetch_matrices.py and set PIPESAFE_MATRIX_DIR to rerun.",
        )
    A, _ = load_matrix_market(str(path))
    b = spmv(A, np.ones(A.n_cols))
    return A, b


def _iters(A, b, method, **cfg):
    defaults = dict(tol=EPS, max_iters=MAX_ITERS)
    defaults.update(cfg)
    out = solve(A, b, method=method, config=SolverConfig(**defaults))
    return out


def test_criterion_1_difficult_matrices_qualitative():
    # published counts: 6400 on the first matrix, 5207 on the second,
    # single-reduction sequential method only; the plain pipelined method
    # and the two-phase method both stall at the cap
    A1, b1 = _load_or_skip(1, "sherman3")
    A2, b2 = _load_or_skip(1, "utm5940")
    problems = []

    out = _iters(A1, b1, "ssbicgsafe2")
    if out.status is not SolveStatus.CONVERGED:
        problems.append(f"sherman3 ssbicgsafe2 did not converge ({out.status})")
    elif not 6400 * 0.75 <= out.iterations <= 6400 * 1.25:
        problems.append(f"sherman3 ssbicgsafe2 iters {out.iterations} outside 6400 +-25%")

    for method in ("bicgstab", "pbicgsafe"):
        out = _iters(A1, b1, method)
        if out.status is SolveStatus.CONVERGED:
            problems.append(f"sherman3 {method} unexpectedly converged")

    out = _iters(A2, b2, "ssbicgsafe2")
    if out.status is not SolveStatus.CONVERGED:
        problems.append(f"utm5940 ssbicgsafe2 did not converge ({out.status})")
    elif not 5207 * 0.75 <= out.iterations <= 5207 * 1.25:
        problems.append(f"utm5940 ssbicgsafe2 iters {out.iterations} outside 5207 +-25%")

    for method in ("bicgstab", "pbicgsafe"):
        out = _iters(A2, b2, method)
        if out.status is SolveStatus.CONVERGED:
            problems.append(f"utm5940 {method} unexpectedly converged")

    out = _iters(A2, b2, "pbicgsafe-rr", rr_epoch=100)
    if out.status is not SolveStatus.CONVERGED:
        problems.append(f"utm5940 pbicgsafe-rr (m=100) did not converge ({out.status})")

    # replacement rescues the first matrix for some epoch in [90, 110]
    rescued = None
    for m in [96] + [m for m in range(90, 111) if m != 96]:
        out = _iters(A1, b1, "pbicgsafe-rr", rr_epoch=m)
        if out.status is SolveStatus.CONVERGED:
            rescued = m
            break
    if rescued is None:
        problems.append("sherman3 pbicgsafe-rr found no working epoch in [90, 110]")

    _verdict(1, not problems, "; ".join(problems) or f"replacement epoch {rescued}")


def test_criterion_2_midsize_matrices_quantitative():
    # published counts: epb3 (3847, 3037, 4719), bcsstk18 (120, 147, 141)
    # for the pipelined, sequential single-reduction, and two-phase methods
    tabulated = {
        "epb3": {"pbicgsafe": 3847, "ssbicgsafe2": 3037, "bicgstab": 4719},
        "bcsstk18": {"pbicgsafe": 120, "ssbicgsafe2": 147, "bicgstab": 141},
    }
    problems = []
    counts = {}
    for name, table in tabulated.items():
        A, b = _load_or_skip(2, name)
        for method in ("pbicgsafe", "ssbicgsafe2", "bicgstab", "pbicgsafe-rr"):
            out = _iters(A, b, method)
            if out.status is not SolveStatus.CONVERGED:
                problems.append(f"{name} {method} did not converge ({out.status})")
                continue
            counts[(name, method)] = out.iterations
            expect = table.get(method)
            if expect is not None and not expect * 0.7 <= out.iterations <= expect * 1.3:
                problems.append(
                    f"{name} {method} iters {out.iterations} outside {expect} +-30%"
                )
    ss = counts.get(("epb3", "ssbicgsafe2"))
    bi = counts.get(("epb3", "bicgstab"))
    if ss is not None and bi is not None and not ss < bi:
        problems.append(f"epb3 ordering violated: {ss} !< {bi}")
    _verdict(2, not problems, "; ".join(problems))


def test_criterion_3_equivalence_and_recurrence_fidelity():
    t0 = perf_counter()
    A, _ = gen_poisson(2, 30)
    b = spmv(A, np.ones(A.n_rows))
    cfg = SolverConfig(tol=1e-30, max_iters=20)
    o1 = solve_ssbicgsafe2(A, b, config=cfg)
    o2 = solve_pbicgsafe(A, b, config=cfg)

    problems = []
    worst = 0.0
    for r1, r2 in zip(o1.history[:21], o2.history[:21]):
        rel = abs(r2.rel_res_recur - r1.rel_res_recur) / max(r1.rel_res_recur, 1e-300)
        worst = max(worst, rel)
    if worst > 1e-6:
        problems.append(f"history divergence {worst:.3e} > 1e-6")

    norm_a = float(np.max(np.sum(np.abs(A.to_dense()), axis=1)))
    worst_aux = 0.0

    def hook(i, ws):
        nonlocal worst_aux
        for carried, source in (("s", "r"), ("q", "o"), ("w", "u"), ("l", "t"), ("g", "y")):
            err = float(np.linalg.norm(ws[carried] - spmv(A, ws[source])))
            bound = 1e-8 * (1.0 + norm_a * float(np.linalg.norm(ws[source])))
            if err > bound:
                worst_aux = max(worst_aux, err / bound)

    solve_pbicgsafe(A, b, config=SolverConfig(tol=1e-30, max_iters=20), trace_hook=hook)
    if worst_aux > 0.0:
        problems.append(f"auxiliary product identity violated by {worst_aux:.2f}x")

    elapsed = perf_counter() - t0
    if elapsed >= 5.0:
        problems.append(f"took {elapsed:.1f}s, budget 5s")
    _verdict(3, not problems, "; ".join(problems) or f"worst divergence {worst:.2e}, {elapsed:.2f}s")


def test_criterion_4_coefficient_oracles():
    t0 = perf_counter()
    rng = np.random.default_rng(2024)
    problems = []
    worst = 0.0
    for trial in range(1000):
        s = rng.standard_normal(6)
        y = rng.standard_normal(6)
        r = rng.standard_normal(6)
        # associate-residual pair: minimize || r - zeta*s - eta*y ||
        zeta, eta = compute_zeta_eta_safe(
            np.dot(s, s), np.dot(y, y), np.dot(s, y), np.dot(s, r), np.dot(y, r), False
        )
        ref, *_ = np.linalg.lstsq(np.column_stack([s, y]), r, rcond=None)
        err = max(abs(zeta - ref[0]), abs(eta - ref[1]))
        # three-phase pair: minimize || t - eta*y - zeta*At ||
        at, t = s, r  # reuse draws; roles differ
        zeta2, eta2 = compute_zeta_eta_gpbicg(
            np.dot(y, y), np.dot(at, t), np.dot(y, t), np.dot(at, y), np.dot(at, at), False
        )
        ref2, *_ = np.linalg.lstsq(np.column_stack([at, y]), t, rcond=None)
        err = max(err, abs(zeta2 - ref2[0]), abs(eta2 - ref2[1]))
        worst = max(worst, err)
        if err > 1e-12:
            problems.append(f"trial {trial}: lstsq mismatch {err:.2e}")
            break

    # optimality sweep: no nearby pair does better on the objective
    for _ in range(100):
        s = rng.standard_normal(8)
        y = rng.standard_normal(8)
        r = rng.standard_normal(8)
        zeta, eta = compute_zeta_eta_safe(
            np.dot(s, s), np.dot(y, y), np.dot(s, y), np.dot(s, r), np.dot(y, r), False
        )
        best = float(np.dot(r - zeta * s - eta * y, r - zeta * s - eta * y))
        for dz in (-0.03, -0.01, 0.0, 0.01, 0.03):
            for de in (-0.03, -0.01, 0.0, 0.01, 0.03):
                cand = r - (zeta + dz) * s - (eta + de) * y
                if float(np.dot(cand, cand)) < best - 1e-9 * abs(best):
                    problems.append(f"perturbation ({dz}, {de}) beat the minimizer")
    elapsed = perf_counter() - t0
    if elapsed >= 1.0:
        problems.append(f"took {elapsed:.2f}s, budget 1s")
    _verdict(4, not problems, "; ".join(problems) or f"worst error {worst:.2e}, {elapsed:.2f}s")


def test_criterion_5_per_iteration_counters():
    expected = {"bicgstab": (2, 5, 2), "ssbicgsafe2": (2, 9, 1), "pbicgsafe": (2, 9, 1)}
    A, _ = gen_poisson(2, 20)
    b = spmv(A, np.ones(A.n_rows))
    problems = []
    for method, triple in expected.items():
        out = solve(A, b, method=method, config=SolverConfig(tol=1e-10, max_iters=2000))
        row = per_iteration_costs(out.counters, method)  # raises on any deviation
        got = (row.ax_per_iter, row.dots_per_iter, row.reductions_per_iter)
        if got != triple:
            problems.append(f"{method}: {got} != {triple}")
    _verdict(5, not problems, "; ".join(problems) or "exact equality, no tolerance")


def test_criterion_6_overlap_contract():
    A, _ = gen_poisson(2, 18)
    b = spmv(A, np.ones(A.n_rows))
    cfg = SolverConfig(tol=EPS, max_iters=2000)
    problems = []

    plan = PartitionPlan.balanced(A.n_rows, 2)
    eng = ReductionEngine(plan, mode="threaded", deterministic=True)
    with eng:
        out_threaded = solve(A, b, method="pbicgsafe", config=cfg, engine=eng)
    rep = verify_phase_order(eng.log, "pbicgsafe")
    if not rep.ok:
        problems.append(f"pipelined schedule violations: {rep.violations[:3]}")
    for it in range(out_threaded.iterations):
        evs = [e for e in eng.log.events() if e.iter == it]
        starts = [e.seq for e in evs if e.kind == REDUCE_START]
        spine = [e.seq for e in evs if e.kind == SPMV_END and e.tag == "As"]
        if len(starts) != 1:
            problems.append(f"iter {it}: {len(starts)} reductions")
            break
        if not (spine and starts[0] < spine[0]):
            problems.append(f"iter {it}: reduction did not precede the spine product end")
            break

    eng2 = ReductionEngine(plan, mode="threaded", deterministic=True)
    with eng2:
        solve(A, b, method="ssbicgsafe2", config=cfg, engine=eng2)
    rep2 = verify_phase_order(eng2.log, "ssbicgsafe2")
    if not rep2.ok:
        problems.append(f"sequential schedule violations: {rep2.violations[:3]}")

    with ReductionEngine(plan, mode="inline", deterministic=True) as eng3:
        out_inline = solve(A, b, method="pbicgsafe", config=cfg, engine=eng3)
    if len(out_inline.history) != len(out_threaded.history) or any(
        r1.rel_res_recur != r2.rel_res_recur
        for r1, r2 in zip(out_inline.history, out_threaded.history)
    ):
        problems.append("threaded history != inline history (bitwise)")
    if not np.array_equal(out_inline.x, out_threaded.x):
        problems.append("threaded solution != inline solution (bitwise)")
    _verdict(6, not problems, "; ".join(problems))


def test_criterion_7_convergence_certificate():
    problems = []
    checked = 0
    systems = [gen_poisson(1, 64), gen_poisson(2, 30), gen_poisson(3, 12)]
    optional = matrix_dir() / "poisson3Db.mtx"
    if optional.exists():
        systems.append(load_matrix_market(str(optional)))
    for A, meta in systems:
        b = spmv(A, np.ones(A.n_cols))
        scale = float(np.linalg.norm(b))
        for method in ("bicgstab", "gpbicg", "ssbicgsafe2", "pbicgsafe", "pbicgsafe-rr"):
            out = solve(
                A, b, method=method,
                config=SolverConfig(tol=EPS, max_iters=MAX_ITERS, rr_epoch=25),
            )
            if out.status is not SolveStatus.CONVERGED:
                problems.append(f"{meta.name} {method}: {out.status}")
                continue
            true_rel = float(np.linalg.norm(b - spmv(A, out.x))) / scale
            checked += 1
            if not true_rel <= 10.0 * EPS:
                problems.append(
                    f"{meta.name} {method}: true rel {true_rel:.3e} > 10*{EPS}"
                )
    note = f"{checked} converged runs certified"
    if not optional.exists():
        note += "; optional large matrix not staged, generator systems only"
    _verdict(7, not problems, "; ".join(problems) or note)
