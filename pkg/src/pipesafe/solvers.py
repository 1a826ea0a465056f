"""Bi-Lanczos solvers with fused, overlappable inner-product batches.

Five methods share one convention set: right-hand side b, initial guess
x0 (zero when omitted), shadow residual fixed to the initial residual,
convergence when the recurrence residual satisfies ||r_i|| <= tol*||r0||,
and a per-iteration history of relative residuals.

* solve_bicgstab      two reduction phases per iteration
* solve_gpbicg        three reduction phases per iteration
* solve_ssbicgsafe2   one reduction phase, after the product A r
* solve_pbicgsafe     one reduction phase, overlapped with the product A s
* solve_pbicgsafe_rr  pipelined variant with scheduled residual replacement

The two single-reduction methods compute the same iterates in exact
arithmetic; the pipelined one maintains the products A r, A o, A u, A t,
A y by recurrences so its lone reduction no longer depends on the
iteration's first matrix-vector product and can hide behind it.  Scheduled
residual replacement recomputes those vectors from their definitions every
m-th iteration to stop recurrence drift from stalling convergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels as kn
from .coefficients import (
    BreakdownError,
    CoefficientSet,
    compute_alpha_beta_safe,
    compute_zeta_eta_gpbicg,
    compute_zeta_eta_safe,
    guard_denominator,
)
from .instrument import DriftMonitor, DriftReport, OpCounters
from .linalg import CsrMatrix, check_finite
from .reduction import DotBatch, PartitionPlan, ReductionEngine


class SolveStatus(Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    BREAKDOWN = "breakdown"
    NON_FINITE = "non_finite"


@dataclass
class SolverConfig:
    """Knobs shared by every method; rr_* apply to the replacing variant.

    rr_epoch is the replacement period m (fires at iterations i with
    i % m == 0, 0 < i < rr_cutoff); rr_cutoff defaults to max_iters.
    monitor_every > 0 computes the true residual every so many iterations.
    """

    tol: float = 1e-8
    max_iters: int = 10_000
    rr_epoch: int = 100
    rr_cutoff: int | None = None
    record_history: bool = True
    monitor_every: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rr_epoch < 1:
            raise ValueError("rr_epoch must be >= 1")
        if self.rr_cutoff is not None and not 0 <= self.rr_cutoff <= self.max_iters:
            raise ValueError("rr_cutoff must lie in [0, max_iters]")
        if self.monitor_every < 0:
            raise ValueError("monitor_every must be >= 0")


@dataclass
class IterationRecord:
    """State at the convergence check of one iteration.

    rel_res_recur is sqrt((r_i, r_i)) / ||r0|| straight from the batch;
    rel_res_true is filled only when the drift monitor ran there.
    replaced marks the record whose residual vector was recomputed as
    b - A x by the previous iteration's replacement step.
    """

    iter: int
    rel_res_recur: float
    rel_res_true: float | None = None
    replaced: bool = False
    coefficients: CoefficientSet | None = None


@dataclass
class SolveOutcome:
    status: SolveStatus
    iterations: int
    x: np.ndarray
    history: list[IterationRecord]
    counters: OpCounters
    r0_norm: float
    final_rel_res_recur: float
    best_rel_res_recur: float
    breakdown_quantity: str | None = None
    failure_iter: int | None = None
    drift: list[DriftReport] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status is SolveStatus.CONVERGED


def write_history_csv(path: str, history: list[IterationRecord]) -> None:
    """Write `iter,rel_res_recur,rel_res_true,replaced` rows.

    Formatting is fixed (shortest round-trip float repr via %.17g) so a
    deterministic rerun produces a byte-identical file.
    """
    with open(path, "w", encoding="ascii") as fh:
        fh.write("iter,rel_res_recur,rel_res_true,replaced\n")
        for rec in history:
            true_s = "" if rec.rel_res_true is None else format(rec.rel_res_true, ".17g")
            fh.write(
                f"{rec.iter},{format(rec.rel_res_recur, '.17g')},{true_s},"
                f"{int(rec.replaced)}\n"
            )


def _prepare(A: CsrMatrix, b: np.ndarray, x0: np.ndarray | None) -> np.ndarray:
    if A.n_rows != A.n_cols:
        raise ValueError(f"solver needs a square operator, got {A.shape}")
    if b.shape != (A.n_rows,):
        raise ValueError(f"rhs has shape {b.shape}, matrix is {A.shape}")
    check_finite(b, "right-hand side")
    if x0 is None:
        return np.zeros(A.n_rows)
    x = np.array(x0, dtype=np.float64)
    if x.shape != (A.n_rows,):
        raise ValueError(f"x0 has shape {x.shape}, matrix is {A.shape}")
    check_finite(x, "initial guess")
    return x


def _default_engine(n: int, config: SolverConfig) -> ReductionEngine:
    return ReductionEngine(
        PartitionPlan.balanced(n, 1), mode="inline", deterministic=config.deterministic
    )


class _Run:
    """Bookkeeping shared by the solver loops."""

    def __init__(self, config, counters, monitor):
        self.config = config
        self.counters = counters
        self.monitor = monitor
        self.history: list[IterationRecord] = []
        self.r0_norm = 0.0

    def record(
        self, i: int, rel: float, x: np.ndarray, replaced: bool = False, force_true: bool = False
    ) -> IterationRecord:
        rec = IterationRecord(i, rel, replaced=replaced)
        if self.monitor is not None:
            rep = self.monitor.observe(i, x, rel, force=force_true or replaced)
            if rep is not None:
                rec.rel_res_true = rep.rel_res_true
        if self.config.record_history:
            self.history.append(rec)
        return rec

    def rel_of(self, rr_norm2: float) -> float:
        if self.r0_norm == 0.0:
            return 0.0
        return math.sqrt(max(rr_norm2, 0.0)) / self.r0_norm

    def outcome(self, status, iterations, x, **kw) -> SolveOutcome:
        best = min((rec.rel_res_recur for rec in self.history), default=math.inf)
        final = self.history[-1].rel_res_recur if self.history else math.inf
        if self.monitor is not None:
            self.counters.n_monitor_spmv = self.monitor.n_spmv
        return SolveOutcome(
            status=status,
            iterations=iterations,
            x=x,
            history=self.history,
            counters=self.counters,
            r0_norm=self.r0_norm,
            final_rel_res_recur=final,
            best_rel_res_recur=best,
            drift=self.monitor.reports if self.monitor is not None else [],
            **kw,
        )


def _make_monitor(A, b, config, engine):
    if config.monitor_every <= 0:
        return None
    return DriftMonitor(A, b, config.tol, config.monitor_every, dot=engine.plan_dot)


# ---------------------------------------------------------------------------
# two-phase method


def solve_bicgstab(
    A: CsrMatrix,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    config: SolverConfig | None = None,
    engine: ReductionEngine | None = None,
    trace_hook=None,
) -> SolveOutcome:
    """Stabilized bi-conjugate gradients, two reduction phases per iteration.

    The five dot products of an iteration are grouped into a single-pair
    phase after A p and a four-pair phase after A t; the beta numerator
    (r0*, r_{i+1}) and the residual norm ||r_{i+1}||^2 then follow from
    scalar identities

        (r0*, r_{i+1}) = ((r0*, r) - alpha (r0*, Ap)) - omega (r0*, At)
        ||r_{i+1}||^2  = (t, t) - 2 omega (At, t) + omega^2 (At, At)

    instead of a third reduction.  The norm recurrence can round to a tiny
    negative near convergence and is clamped at zero.
    """
    config = config or SolverConfig()
    x = _prepare(A, b, x0)
    n = A.n_rows
    engine = engine if engine is not None else _default_engine(n, config)
    counters = OpCounters(n_workspace_vectors=7)
    monitor = _make_monitor(A, b, config, engine)
    run = _Run(config, counters, monitor)

    r = np.empty(n)
    ax0 = engine.spmv(A, x, -1, "Ax")
    counters.spmv()
    kn.lincomb2(r, 1.0, b, -1.0, ax0)  # r0 = b - A x0
    counters.updates(0, 1)
    r0s = r.copy()

    ticket = engine.submit_batch(DotBatch([("r", r, r)]), -1)
    counters.batch(1)
    rr = ticket.result("r")
    f = rr  # (r0*, r0) equals ||r0||^2 for this shadow choice
    run.r0_norm = math.sqrt(rr)
    if monitor is not None:
        monitor.scale = run.r0_norm

    p = np.zeros(n)
    t = np.empty(n)
    ap = np.zeros(n)
    at = np.empty(n)
    alpha = omega = 0.0
    beta = 0.0
    counters.snapshot()

    iterations = 0
    for i in range(config.max_iters):
        rel = run.rel_of(rr)
        rec = run.record(i, rel, x, force_true=rel <= config.tol)
        if not math.isfinite(rel):
            return run.outcome(SolveStatus.NON_FINITE, i, x, failure_iter=i)
        if rel <= config.tol:
            return run.outcome(SolveStatus.CONVERGED, i, x)

        kn.add_scaled_damped_diff(p, r, beta, p, omega, ap)  # p = r + beta*(p - omega*Ap)
        counters.updates(2, 2)
        engine.spmv(A, p, i, "Ap", out=ap)
        counters.spmv()
        first = engine.submit_batch(DotBatch([("g", r0s, ap)]), i)
        counters.batch(1)
        gdot = first.result("g")
        try:
            guard_denominator(gdot, abs(gdot), "alpha denominator (r0*, Ap)")
            alpha = f / gdot
            kn.lincomb2(t, 1.0, r, -alpha, ap)  # t = r - alpha*Ap
            counters.updates(1, 1)
            engine.spmv(A, t, i, "At", out=at)
            counters.spmv()
            second = engine.submit_batch(
                DotBatch([("b", at, t), ("e", at, at), ("c", r0s, at), ("d", t, t)]), i
            )
            counters.batch(4)
            dots = second.results()
            if dots["e"] == 0.0 and dots["d"] == 0.0:
                omega = 0.0  # t = 0: the alpha half-step already landed
            else:
                guard_denominator(dots["e"], abs(dots["e"]), "omega denominator (At, At)")
                omega = dots["b"] / dots["e"]
            kn.lincomb3(x, 1.0, x, alpha, p, omega, t)  # x = x + alpha*p + omega*t
            counters.updates(2, 2)
            kn.lincomb2(r, 1.0, t, -omega, at)  # r = t - omega*At
            counters.updates(1, 1)
            f_next = (f - alpha * gdot) - omega * dots["c"]
            rr = max(dots["d"] - 2.0 * omega * dots["b"] + omega * omega * dots["e"], 0.0)
            if rr == 0.0:
                beta = 0.0  # converged exactly; no next direction needed
            else:
                guard_denominator(omega, abs(omega), "beta denominator omega")
                guard_denominator(f, abs(f), "beta denominator (r0*, r)")
                beta = (alpha / omega) * (f_next / f)
        except BreakdownError as exc:
            return run.outcome(
                SolveStatus.BREAKDOWN, i, x, breakdown_quantity=exc.quantity, failure_iter=i
            )
        f = f_next
        rec.coefficients = CoefficientSet(alpha=alpha, beta=beta, omega=omega)
        if not rec.coefficients.finite():
            return run.outcome(SolveStatus.NON_FINITE, i, x, failure_iter=i)
        if trace_hook is not None:
            trace_hook(i, {"x": x, "r": r, "p": p, "t": t, "Ap": ap, "At": at})
        counters.snapshot()
        iterations = i + 1

    rel = run.rel_of(rr)
    run.record(config.max_iters, rel, x, force_true=True)
    status = SolveStatus.CONVERGED if rel <= config.tol else SolveStatus.MAX_ITERS
    return run.outcome(status, iterations, x)


# ---------------------------------------------------------------------------
# three-phase method


def solve_gpbicg(
    A: CsrMatrix,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    config: SolverConfig | None = None,
    engine: ReductionEngine | None = None,
    trace_hook=None,
    _stab_coeffs: bool = False,
) -> SolveOutcome:
    """Generalized product-type solver, three reduction phases per iteration.

    The damping pair (zeta, eta) minimizes ||t - eta*y - zeta*At|| through
    the 2x2 normal equations; _stab_coeffs forces zeta = (At,t)/(At,At),
    eta = 0 every iteration (a diagnostic mode that reproduces the
    two-phase method's iterates).
    """
    config = config or SolverConfig()
    x = _prepare(A, b, x0)
    n = A.n_rows
    engine = engine if engine is not None else _default_engine(n, config)
    counters = OpCounters(n_workspace_vectors=11)
    monitor = _make_monitor(A, b, config, engine)
    run = _Run(config, counters, monitor)

    r = np.empty(n)
    ax0 = engine.spmv(A, x, -1, "Ax")
    counters.spmv()
    kn.lincomb2(r, 1.0, b, -1.0, ax0)  # r0 = b - A x0
    counters.updates(0, 1)
    r0s = r.copy()

    ticket = engine.submit_batch(DotBatch([("r", r, r)]), -1)
    counters.batch(1)
    rr = ticket.result("r")
    f = rr
    run.r0_norm = math.sqrt(rr)
    if monitor is not None:
        monitor.scale = run.r0_norm

    p = np.zeros(n)
    u = np.zeros(n)
    t = np.zeros(n)
    w = np.zeros(n)
    y = np.empty(n)
    z = np.zeros(n)
    ap = np.empty(n)
    at = np.empty(n)
    alpha = beta = zeta = eta = 0.0
    counters.snapshot()

    iterations = 0
    for i in range(config.max_iters):
        rel = run.rel_of(rr)
        rec = run.record(i, rel, x, force_true=rel <= config.tol)
        if not math.isfinite(rel):
            return run.outcome(SolveStatus.NON_FINITE, i, x, failure_iter=i)
        if rel <= config.tol:
            return run.outcome(SolveStatus.CONVERGED, i, x)

        kn.add_scaled_diff(p, r, beta, p, u)  # p = r + beta*(p - u)
        counters.updates(1, 2)
        engine.spmv(A, p, i, "Ap", out=ap)
        counters.spmv()
        first = engine.submit_batch(DotBatch([("g", r0s, ap)]), i)
        counters.batch(1)
        gdot = first.result("g")
        try:
            guard_denominator(gdot, abs(gdot), "alpha denominator (r0*, Ap)")
            alpha = f / gdot
            # y = t_prev - r - alpha*w_prev + alpha*Ap
            kn.lincomb4(y, 1.0, t, -1.0, r, -alpha, w, alpha, ap)
            counters.updates(2, 3)
            # stash (t_prev - r + beta*u_prev) in u before t is overwritten
            kn.lincomb3(u, 1.0, t, -1.0, r, beta, u)
            counters.updates(1, 2)
            kn.lincomb2(t, 1.0, r, -alpha, ap)  # t = r - alpha*Ap
            counters.updates(1, 1)
            engine.spmv(A, t, i, "At", out=at)
            counters.spmv()
            second = engine.submit_batch(
                DotBatch(
                    [("a", y, y), ("b", at, t), ("c", y, t), ("d", at, y), ("e", at, at)]
                ),
                i,
            )
            counters.batch(5)
            d2 = second.results()
            if _stab_coeffs:
                guard_denominator(d2["e"], abs(d2["e"]), "zeta denominator (At, At)")
                zeta, eta = d2["b"] / d2["e"], 0.0
            else:
                zeta, eta = compute_zeta_eta_gpbicg(
                    d2["a"], d2["b"], d2["c"], d2["d"], d2["e"], i == 0
                )
            kn.lincomb2(u, zeta, ap, eta, u)  # u = zeta*Ap + eta*(stash)
            counters.updates(2, 1)
            kn.lincomb3(z, zeta, r, eta, z, -alpha, u)  # z = zeta*r + eta*z - alpha*u
            counters.updates(3, 2)
            kn.lincomb3(x, 1.0, x, alpha, p, 1.0, z)  # x = x + alpha*p + z
            counters.updates(1, 2)
            kn.lincomb3(r, 1.0, t, -eta, y, -zeta, at)  # r = t - eta*y - zeta*At
            counters.updates(2, 2)
            third = engine.submit_batch(DotBatch([("f", r0s, r), ("r", r, r)]), i)
            counters.batch(2)
            d3 = third.results()
            rr = d3["r"]
            if rr == 0.0:
                beta = 0.0  # converged exactly; no next direction needed
            else:
                guard_denominator(zeta, abs(zeta), "beta denominator zeta")
                guard_denominator(f, abs(f), "beta denominator (r0*, r)")
                beta = (alpha / zeta) * (d3["f"] / f)
            f = d3["f"]
            kn.lincomb2(w, 1.0, at, beta, ap)  # w = At + beta*Ap
            counters.updates(1, 1)
        except BreakdownError as exc:
            return run.outcome(
                SolveStatus.BREAKDOWN, i, x, breakdown_quantity=exc.quantity, failure_iter=i
            )
        rec.coefficients = CoefficientSet(alpha=alpha, beta=beta, zeta=zeta, eta=eta)
        if not rec.coefficients.finite():
            return run.outcome(SolveStatus.NON_FINITE, i, x, failure_iter=i)
        if trace_hook is not None:
            trace_hook(i, {"x": x, "r": r, "p": p, "u": u, "t": t, "w": w, "y": y, "z": z})
        counters.snapshot()
        iterations = i + 1

    rel = run.rel_of(rr)
    run.record(config.max_iters, rel, x, force_true=True)
    status = SolveStatus.CONVERGED if rel <= config.tol else SolveStatus.MAX_ITERS
    return run.outcome(status, iterations, x)


# ---------------------------------------------------------------------------
# single-reduction methods


def _safe_batch(i, s, y, r, r0s, t):
    if i == 0:
        pairs = [("a", s, s), ("d", s, r), ("f", r0s, r), ("g", r0s, s), ("r", r, r)]
    else:
        pairs = [
            ("a", s, s),
            ("b", y, y),
            ("c", s, y),
            ("d", s, r),
            ("e", y, r),
            ("f", r0s, r),
            ("g", r0s, s),
            ("h", r0s, t),
            ("r", r, r),
        ]
    return DotBatch(pairs)


def solve_ssbicgsafe2(
    A: CsrMatrix,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    config: SolverConfig | None = None,
    engine: ReductionEngine | None = None,
    trace_hook=None,
) -> SolveOutcome:
    """Single-reduction solver; the batch waits for s = A r each iteration.

    All nine dot products of an iteration (five on the first) land in one
    fused batch submitted right after the product s = A r, so one global
    reduction per iteration suffices; the residual self-product rides in
    the same batch, which is why the convergence check sits after it.
    """
    config = config or SolverConfig()
    x = _prepare(A, b, x0)
    n = A.n_rows
    engine = engine if engine is not None else _default_engine(n, config)
    counters = OpCounters(n_workspace_vectors=11)
    monitor = _make_monitor(A, b, config, engine)
    run = _Run(config, counters, monitor)

    r = np.empty(n)
    ax0 = engine.spmv(A, x, -1, "Ax")
    counters.spmv()
    kn.lincomb2(r, 1.0, b, -1.0, ax0)  # r0 = b - A x0
    counters.updates(0, 1)
    r0s = r.copy()

    p = np.zeros(n)
    u = np.zeros(n)
    t = np.zeros(n)
    y = np.zeros(n)
    z = np.zeros(n)
    o = np.empty(n)
    s = np.empty(n)
    w = np.empty(n)
    alpha = beta = zeta = eta = 0.0
    f_prev = 0.0
    counters.snapshot()

    iterations = 0
    for i in range(config.max_iters):
        first = i == 0
        engine.spmv(A, r, i, "Ar", out=s)  # s = A r
        counters.spmv()
        ticket = engine.submit_batch(_safe_batch(i, s, y, r, r0s, t), i)
        counters.batch(5 if first else 9)
        dots = ticket.results()
        if first:
            run.r0_norm = math.sqrt(dots["r"])
            if monitor is not None:
                monitor.scale = run.r0_norm
        rel = run.rel_of(dots["r"])
        rec = run.record(i, rel, x, force_true=rel <= config.tol)
        if not math.isfinite(rel):
            return run.outcome(SolveStatus.NON_FINITE, i, x, failure_iter=i)
        if rel <= config.tol:
            return run.outcome(SolveStatus.CONVERGED, i, x)

        try:
            alpha, beta = compute_alpha_beta_safe(
                dots["f"], f_prev, dots["g"], dots.get("h", 0.0), alpha, zeta, first
            )
            zeta, eta = compute_zeta_eta_safe(
                dots["a"], dots.get("b", 0.0), dots.get("c", 0.0),
                dots["d"], dots.get("e", 0.0), first,
            )
        except BreakdownError as exc:
            return run.outcome(
                SolveStatus.BREAKDOWN, i, x, breakdown_quantity=exc.quantity, failure_iter=i
            )
        f_prev = dots["f"]
        rec.coefficients = CoefficientSet(alpha=alpha, beta=beta, zeta=zeta, eta=eta)
        if not rec.coefficients.finite():
            return run.outcome(SolveStatus.NON_FINITE, i, x, failure_iter=i)

        kn.add_scaled_diff(p, r, beta, p, u)  # p = r + beta*(p - u)
        counters.updates(1, 2)
        kn.lincomb2(o, 1.0, s, beta, t)  # o = s + beta*t
        counters.updates(1, 1)
        kn.lincomb_nested(u, zeta, o, eta, y, beta, u)  # u = zeta*o + eta*(y + beta*u)
        counters.updates(3, 2)
        engine.spmv(A, u, i, "Au", out=w)  # w = A u
        counters.spmv()
        kn.lincomb2(t, 1.0, o, -1.0, w)  # t = o - w
        counters.updates(0, 1)
        kn.lincomb3(z, zeta, r, eta, z, -alpha, u)  # z = zeta*r + eta*z - alpha*u
        counters.updates(3, 2)
        kn.lincomb3(y, zeta, s, eta, y, -alpha, w)  # y = zeta*s + eta*y - alpha*w
        counters.updates(3, 2)
        kn.lincomb3(x, 1.0, x, alpha, p, 1.0, z)  # x = x + alpha*p + z
        counters.updates(1, 2)
        kn.lincomb3(r, 1.0, r, -alpha, o, -1.0, y)  # r = r - alpha*o - y
        counters.updates(1, 2)
        if trace_hook is not None:
            trace_hook(
                i,
                {"x": x, "r": r, "p": p, "u": u, "o": o, "t": t, "w": w, "y": y, "z": z, "s": s},
            )
        counters.snapshot()
        iterations = i + 1

    rel = run.rel_of(engine.plan_dot(r, r))
    run.record(config.max_iters, rel, x, force_true=True)
    status = SolveStatus.CONVERGED if rel <= config.tol else SolveStatus.MAX_ITERS
    return run.outcome(status, iterations, x)


def _solve_pipelined(
    A: CsrMatrix,
    b: np.ndarray,
    x0: np.ndarray | None,
    config: SolverConfig,
    engine: ReductionEngine | None,
    trace_hook,
    replace_residuals: bool,
) -> SolveOutcome:
    config = config or SolverConfig()
    x = _prepare(A, b, x0)
    n = A.n_rows
    engine = engine if engine is not None else _default_engine(n, config)
    counters = OpCounters(n_workspace_vectors=16)
    monitor = _make_monitor(A, b, config, engine)
    run = _Run(config, counters, monitor)

    r = np.empty(n)
    ax0 = engine.spmv(A, x, -1, "Ax")
    counters.spmv()
    kn.lincomb2(r, 1.0, b, -1.0, ax0)  # r0 = b - A x0
    counters.updates(0, 1)
    r0s = r.copy()
    s = engine.spmv(A, r, -1, "Ar")  # recurrence base: s0 = A r0
    counters.spmv()

    p = np.zeros(n)
    u = np.zeros(n)
    t = np.zeros(n)
    y = np.zeros(n)
    z = np.zeros(n)
    g = np.zeros(n)
    l = np.zeros(n)
    w = np.zeros(n)
    o = np.empty(n)
    q = np.empty(n)
    alpha = beta = zeta = eta = 0.0
    f_prev = 0.0
    epoch = config.rr_epoch
    cutoff = config.rr_cutoff if config.rr_cutoff is not None else config.max_iters
    pending_replaced = False
    counters.snapshot()

    iterations = 0
    for i in range(config.max_iters):
        first = i == 0
        ticket, a_s = engine.overlap(_safe_batch(i, s, y, r, r0s, t), A, s, i, "As")
        counters.batch(5 if first else 9)
        counters.spmv()
        dots = ticket.results()
        if first:
            run.r0_norm = math.sqrt(dots["r"])
            if monitor is not None:
                monitor.scale = run.r0_norm
        rel = run.rel_of(dots["r"])
        rec = run.record(
            i, rel, x, replaced=pending_replaced, force_true=rel <= config.tol
        )
        pending_replaced = False
        if not math.isfinite(rel):
            return run.outcome(SolveStatus.NON_FINITE, i, x, failure_iter=i)
        if rel <= config.tol:
            return run.outcome(SolveStatus.CONVERGED, i, x)

        try:
            alpha, beta = compute_alpha_beta_safe(
                dots["f"], f_prev, dots["g"], dots.get("h", 0.0), alpha, zeta, first
            )
            zeta, eta = compute_zeta_eta_safe(
                dots["a"], dots.get("b", 0.0), dots.get("c", 0.0),
                dots["d"], dots.get("e", 0.0), first,
            )
        except BreakdownError as exc:
            return run.outcome(
                SolveStatus.BREAKDOWN, i, x, breakdown_quantity=exc.quantity, failure_iter=i
            )
        f_prev = dots["f"]
        rec.coefficients = CoefficientSet(alpha=alpha, beta=beta, zeta=zeta, eta=eta)
        if not rec.coefficients.finite():
            return run.outcome(SolveStatus.NON_FINITE, i, x, failure_iter=i)

        replace = replace_residuals and i % epoch == 0 and 0 < i < cutoff

        kn.add_scaled_diff(p, r, beta, p, u)  # p = r + beta*(p - u)
        counters.updates(1, 2)
        kn.lincomb2(o, 1.0, s, beta, t)  # o = s + beta*t
        counters.updates(1, 1)
        kn.lincomb_nested(u, zeta, o, eta, y, beta, u)  # u = zeta*o + eta*(y + beta*u)
        counters.updates(3, 2)
        if replace:
            engine.spmv(A, o, i, "Ao", out=q)  # q = A o recomputed
            counters.spmv()
            engine.spmv(A, u, i, "Au", out=w)  # w = A u recomputed
            counters.spmv()
        else:
            kn.lincomb2(q, 1.0, a_s, beta, l)  # q = As + beta*l
            counters.updates(1, 1)
            kn.lincomb_nested(w, zeta, q, eta, g, beta, w)  # w = zeta*q + eta*(g + beta*w)
            counters.updates(3, 2)
        kn.lincomb2(t, 1.0, o, -1.0, w)  # t = o - w
        counters.updates(0, 1)
        kn.lincomb3(z, zeta, r, eta, z, -alpha, u)  # z = zeta*r + eta*z - alpha*u
        counters.updates(3, 2)
        kn.lincomb3(y, zeta, s, eta, y, -alpha, w)  # y = zeta*s + eta*y - alpha*w
        counters.updates(3, 2)
        kn.lincomb3(x, 1.0, x, alpha, p, 1.0, z)  # x = x + alpha*p + z
        counters.updates(1, 2)
        if replace:
            ax = engine.spmv(A, x, i, "Ax")
            counters.spmv()
            kn.lincomb2(r, 1.0, b, -1.0, ax)  # r = b - A x recomputed
            counters.updates(0, 1)
            engine.spmv(A, t, i, "At", out=l)  # l = A t recomputed
            counters.spmv()
            engine.spmv(A, y, i, "Ay", out=g)  # g = A y recomputed
            counters.spmv()
            engine.spmv(A, r, i, "Ar", out=s)  # s = A r recomputed
            counters.spmv()
            pending_replaced = True
        else:
            kn.lincomb3(r, 1.0, r, -alpha, o, -1.0, y)  # r = r - alpha*o - y
            counters.updates(1, 2)
            aw = engine.spmv(A, w, i, "Aw")
            counters.spmv()
            kn.lincomb2(l, 1.0, q, -1.0, aw)  # l = q - A w
            counters.updates(0, 1)
            kn.lincomb3(g, zeta, a_s, eta, g, -alpha, aw)  # g = zeta*As + eta*g - alpha*Aw
            counters.updates(3, 2)
            kn.lincomb3(s, 1.0, s, -alpha, q, -1.0, g)  # s = s - alpha*q - g
            counters.updates(1, 2)
        if trace_hook is not None:
            trace_hook(
                i,
                {
                    "x": x, "r": r, "p": p, "u": u, "o": o, "t": t, "w": w,
                    "y": y, "z": z, "s": s, "q": q, "g": g, "l": l,
                },
            )
        counters.snapshot()
        iterations = i + 1

    rel = run.rel_of(engine.plan_dot(r, r))
    run.record(config.max_iters, rel, x, replaced=pending_replaced, force_true=True)
    status = SolveStatus.CONVERGED if rel <= config.tol else SolveStatus.MAX_ITERS
    return run.outcome(status, iterations, x)


def solve_pbicgsafe(
    A: CsrMatrix,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    config: SolverConfig | None = None,
    engine: ReductionEngine | None = None,
    trace_hook=None,
) -> SolveOutcome:
    """Pipelined single-reduction solver.

    Maintains s = A r, q = A o, w = A u, l = A t, g = A y by recurrences,
    so the fused batch depends only on state from the previous iteration
    and its global reduction overlaps the product A s.
    """
    return _solve_pipelined(
        A, b, x0, config or SolverConfig(), engine, trace_hook, replace_residuals=False
    )


def solve_pbicgsafe_rr(
    A: CsrMatrix,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    config: SolverConfig | None = None,
    engine: ReductionEngine | None = None,
    trace_hook=None,
) -> SolveOutcome:
    """Pipelined solver with scheduled residual replacement.

    Every rr_epoch-th iteration (before rr_cutoff) the recurrence-carried
    vectors are reset to their definitions by explicit products: q = A o,
    w = A u, r = b - A x, l = A t, g = A y, s = A r.  This bounds the
    drift between the recurrence residual and the true residual at the
    cost of extra products on those iterations.
    """
    return _solve_pipelined(
        A, b, x0, config or SolverConfig(), engine, trace_hook, replace_residuals=True
    )


METHODS = {
    "bicgstab": solve_bicgstab,
    "gpbicg": solve_gpbicg,
    "ssbicgsafe2": solve_ssbicgsafe2,
    "pbicgsafe": solve_pbicgsafe,
    "pbicgsafe-rr": solve_pbicgsafe_rr,
}


def solve(
    A: CsrMatrix,
    b: np.ndarray,
    method: str = "pbicgsafe",
    x0: np.ndarray | None = None,
    config: SolverConfig | None = None,
    engine: ReductionEngine | None = None,
    trace_hook=None,
) -> SolveOutcome:
    """Dispatch to one of the five methods by name."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    return METHODS[method](A, b, x0=x0, config=config, engine=engine, trace_hook=trace_hook)
