"""Fused inner-product batches, reduction scheduling, and event evidence.

A solver iteration hands the engine one batch of labelled dot products.
The vectors are split by a :class:`PartitionPlan` into contiguous row
ranges; each range contributes a partial value per pair, and the partials
are combined along a fixed left-to-right chain, so results depend only on
the plan, never on thread timing.  The same plan executed inline or on a
thread pool is therefore bitwise identical.

:meth:`ReductionEngine.overlap` is the communication-hiding primitive: it
posts the batch, then runs one matrix-vector product while the reduction
makes progress, as a structured fork-join of exactly two tasks.  Every
phase appends to an :class:`EventLog`, and :func:`verify_phase_order`
checks the scheduling contract per method from that log alone.
"""

from __future__ import annotations

import json
import os
import threading
import zlib
from concurrent.futures import ThreadPoolExecutor, as_completed
from concurrent.futures import TimeoutError as _FuturesTimeout
from dataclasses import dataclass, field

import numpy as np

from . import kernels as kn
from .linalg import CsrMatrix, check_finite

BATCH_LABELS = ("a", "b", "c", "d", "e", "f", "g", "h", "r")

REDUCE_START = "reduce_start"
REDUCE_END = "reduce_end"
SPMV_START = "spmv_start"
SPMV_END = "spmv_end"
COEFF_READY = "coeff_ready"

ENV_DEBUG = "PIPESAFE_DEBUG"


class TicketPendingError(RuntimeError):
    """A ticket result was read before the reduction completed."""


class EngineTimeoutError(RuntimeError):
    """A scheduled task did not finish within the engine timeout."""


class MutationDuringReductionError(RuntimeError):
    """A batch vector changed while its reduction was in flight."""


@dataclass(frozen=True)
class PartitionPlan:
    """Disjoint contiguous row ranges covering [0, n)."""

    n: int
    ranges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("negative vector length")
        if not self.ranges:
            raise ValueError("plan needs at least one range")
        pos = 0
        for lo, hi in self.ranges:
            # empty ranges would pad the combine chain; only n = 0 gets one
            if lo != pos or hi < lo or (hi == lo and self.n > 0):
                raise ValueError(f"ranges must tile [0, {self.n}) in order; got {self.ranges}")
            pos = hi
        if pos != self.n:
            raise ValueError(f"ranges cover [0, {pos}) but n = {self.n}")

    @property
    def worker_count(self) -> int:
        return len(self.ranges)

    @classmethod
    def balanced(cls, n: int, workers: int) -> "PartitionPlan":
        """Split [0, n) into `workers` near-equal contiguous ranges."""
        if workers < 1:
            raise ValueError("workers must be >= 1")
        workers = min(workers, max(n, 1))
        bounds = np.linspace(0, n, workers + 1).astype(np.int64)
        return cls(n, tuple((int(bounds[k]), int(bounds[k + 1])) for k in range(workers)))


class DotBatch:
    """An ordered set of labelled (x, y) dot-product pairs.

    Labels come from the fixed alphabet a..h plus r (the residual
    self-product); a steady-state batch carries nine pairs, the first
    iteration five.
    """

    def __init__(self, pairs):
        pairs = list(pairs)
        if not 1 <= len(pairs) <= len(BATCH_LABELS):
            raise ValueError(f"batch must hold 1..{len(BATCH_LABELS)} pairs")
        seen = set()
        n = None
        for label, x, y in pairs:
            if label not in BATCH_LABELS:
                raise ValueError(f"unknown batch label {label!r}")
            if label in seen:
                raise ValueError(f"duplicate batch label {label!r}")
            seen.add(label)
            for v in (x, y):
                if v.ndim != 1:
                    raise ValueError("batch vectors must be 1-D")
                if n is None:
                    n = v.shape[0]
                elif v.shape[0] != n:
                    raise ValueError("batch vectors must share one length")
        self.pairs = pairs
        self.n = 0 if n is None else n

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _, _ in self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class ExecutionEvent:
    seq: int
    iter: int
    kind: str
    tag: str | None = None


class EventLog:
    """Append-only, thread-safe record of scheduling events."""

    def __init__(self):
        self._lock = threading.Lock()
        self._events: list[ExecutionEvent] = []

    def append(self, iter_index: int, kind: str, tag: str | None = None) -> ExecutionEvent:
        with self._lock:
            ev = ExecutionEvent(len(self._events), iter_index, kind, tag)
            self._events.append(ev)
            return ev

    def events(self) -> list[ExecutionEvent]:
        with self._lock:
            return list(self._events)

    def __len__(self) -> int:
        with self._lock:
            return len(self._events)

    def write_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="ascii") as fh:
            for ev in self.events():
                fh.write(
                    json.dumps(
                        {"seq": ev.seq, "iter": ev.iter, "kind": ev.kind, "tag": ev.tag}
                    )
                )
                fh.write("\n")

    @classmethod
    def read_jsonl(cls, path: str) -> "EventLog":
        """Rebuild a log from a write_jsonl file, e.g. to replay
        verify_phase_order on a saved run."""
        log = cls()
        with open(path, "r", encoding="ascii") as fh:
            for line in fh:
                row = json.loads(line)
                log._events.append(
                    ExecutionEvent(row["seq"], row["iter"], row["kind"], row.get("tag"))
                )
        return log


class ReductionTicket:
    """Handle to one posted batch; results appear on completion."""

    def __init__(self, iter_index: int, labels: tuple[str, ...]):
        self.iter_index = iter_index
        self.labels = labels
        self._done = threading.Event()
        self._results: dict[str, float] | None = None

    @property
    def complete(self) -> bool:
        return self._done.is_set()

    def _complete(self, results: dict[str, float]) -> None:
        self._results = results
        self._done.set()

    def wait(self, timeout: float | None = None) -> bool:
        return self._done.wait(timeout)

    def result(self, label: str) -> float:
        if not self._done.is_set():
            raise TicketPendingError(
                f"ticket for iteration {self.iter_index} is still pending"
            )
        return self._results[label]

    def results(self) -> dict[str, float]:
        if not self._done.is_set():
            raise TicketPendingError(
                f"ticket for iteration {self.iter_index} is still pending"
            )
        return dict(self._results)


class ReductionEngine:
    """Executes dot batches and matrix-vector products under one plan.

    mode "inline" runs everything on the calling thread; "threaded" uses a
    thread pool sized to the plan (the compiled kernels drop the GIL, so
    the two overlap tasks genuinely run concurrently).  "auto" picks
    threaded when the plan has more than one range.  Numeric results are
    identical across modes for a fixed plan and deterministic=True.

    deterministic=False opts into combining partials in completion order
    (threaded batch submission only); it is never used by the default
    configuration and makes histories non-reproducible.
    """

    def __init__(
        self,
        plan: PartitionPlan,
        mode: str = "auto",
        deterministic: bool = True,
        log: EventLog | None = None,
        timeout: float | None = 600.0,
        debug: bool | None = None,
    ):
        if mode not in ("auto", "inline", "threaded"):
            raise ValueError(f"unknown engine mode {mode!r}")
        if mode == "auto":
            mode = "threaded" if plan.worker_count > 1 else "inline"
        self.plan = plan
        self.mode = mode
        self.deterministic = deterministic
        self.log = log if log is not None else EventLog()
        self.timeout = timeout
        if debug is None:
            debug = os.environ.get(ENV_DEBUG, "") not in ("", "0")
        self.debug = debug
        self._pool: ThreadPoolExecutor | None = None

    # -- lifecycle ---------------------------------------------------------

    def __enter__(self) -> "ReductionEngine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def _ensure_pool(self) -> ThreadPoolExecutor:
        if self._pool is None:
            self._pool = ThreadPoolExecutor(
                max_workers=max(2, self.plan.worker_count),
                thread_name_prefix="pipesafe",
            )
        return self._pool

    # -- internals ---------------------------------------------------------

    def _check_batch(self, batch: DotBatch) -> None:
        if batch.n != self.plan.n:
            raise ValueError(
                f"batch vectors have length {batch.n}, plan covers {self.plan.n}"
            )

    def _range_partials(self, batch: DotBatch, lo: int, hi: int) -> list[float]:
        return [kn.dot_range(x, y, lo, hi) for _, x, y in batch.pairs]

    @staticmethod
    def _combine(labels, per_range) -> dict[str, float]:
        # fixed left-to-right chain over ranges: the reduction tree
        results = {}
        for j, label in enumerate(labels):
            acc = per_range[0][j]
            for k in range(1, len(per_range)):
                acc = acc + per_range[k][j]
            results[label] = acc
        return results

    def _checksums(self, batch: DotBatch) -> dict[int, int]:
        sums: dict[int, int] = {}
        for _, x, y in batch.pairs:
            for v in (x, y):
                key = id(v)
                if key not in sums:
                    sums[key] = zlib.crc32(memoryview(v))
        return sums

    def _verify_checksums(self, batch: DotBatch, before: dict[int, int]) -> None:
        for label, x, y in batch.pairs:
            for v in (x, y):
                if zlib.crc32(memoryview(v)) != before[id(v)]:
                    raise MutationDuringReductionError(
                        f"vector in pair {label!r} mutated while its reduction "
                        f"was in flight"
                    )

    def _reduce_now(self, batch: DotBatch, ticket: ReductionTicket) -> None:
        """Compute partials range by range, combine, complete the ticket."""
        before = self._checksums(batch) if self.debug else None
        per_range = [self._range_partials(batch, lo, hi) for lo, hi in self.plan.ranges]
        results = self._combine(batch.labels, per_range)
        if before is not None:
            self._verify_checksums(batch, before)
        self.log.append(ticket.iter_index, REDUCE_END)
        ticket._complete(results)
        self.log.append(ticket.iter_index, COEFF_READY)

    def _spmv_now(
        self, A: CsrMatrix, x: np.ndarray, out: np.ndarray, iter_index: int, tag: str
    ) -> None:
        self.log.append(iter_index, SPMV_START, tag)
        kn.spmv_range(A.row_ptr, A.col_idx, A.values, x, out, 0, A.n_rows)
        check_finite(out, f"matvec {tag!r} output row")
        self.log.append(iter_index, SPMV_END, tag)

    def _await(self, future, what: str, iter_index: int):
        try:
            return future.result(timeout=self.timeout)
        except (_FuturesTimeout, TimeoutError):
            raise EngineTimeoutError(
                f"{what} for iteration {iter_index} exceeded {self.timeout}s "
                f"(mode={self.mode}, workers={self.plan.worker_count})"
            ) from None

    # -- operations --------------------------------------------------------

    def submit_batch(self, batch: DotBatch, iter_index: int) -> ReductionTicket:
        """Reduce one batch; the returned ticket is already complete.

        Threaded mode fans the ranges across the pool; deterministic mode
        gathers partials in plan order, the opt-out combines them in
        completion order.
        """
        self._check_batch(batch)
        ticket = ReductionTicket(iter_index, batch.labels)
        self.log.append(iter_index, REDUCE_START)
        if self.mode == "threaded" and self.plan.worker_count > 1:
            before = self._checksums(batch) if self.debug else None
            pool = self._ensure_pool()
            futures = [
                pool.submit(self._range_partials, batch, lo, hi)
                for lo, hi in self.plan.ranges
            ]
            if self.deterministic:
                per_range = [
                    self._await(f, "partial reduction", iter_index) for f in futures
                ]
                results = self._combine(batch.labels, per_range)
            else:
                results = None
                for f in as_completed(futures, timeout=self.timeout):
                    part = f.result()
                    if results is None:
                        results = {lab: part[j] for j, lab in enumerate(batch.labels)}
                    else:
                        for j, lab in enumerate(batch.labels):
                            results[lab] += part[j]
            if before is not None:
                self._verify_checksums(batch, before)
            self.log.append(iter_index, REDUCE_END)
            ticket._complete(results)
            self.log.append(iter_index, COEFF_READY)
        else:
            self._reduce_now(batch, ticket)
        return ticket

    def overlap(
        self,
        batch: DotBatch,
        A: CsrMatrix,
        x: np.ndarray,
        iter_index: int,
        tag: str,
    ) -> tuple[ReductionTicket, np.ndarray]:
        """Post the batch, then run y = A @ x while the reduction proceeds.

        Structured fork-join of exactly two tasks: the reduction (posted
        first, so REDUCE_START always precedes SPMV_END) and the product.
        Both vectors sides only read shared inputs.  Returns the completed
        ticket and y.
        """
        self._check_batch(batch)
        if x.shape != (A.n_cols,):
            raise ValueError(f"dimension mismatch: A is {A.shape}, x has {x.shape}")
        if A.n_rows != self.plan.n:
            raise ValueError("matrix rows do not match the plan length")
        ticket = ReductionTicket(iter_index, batch.labels)
        y = np.empty(A.n_rows)
        self.log.append(iter_index, REDUCE_START)
        if self.mode == "threaded":
            pool = self._ensure_pool()
            fut_reduce = pool.submit(self._reduce_now, batch, ticket)
            fut_spmv = pool.submit(self._spmv_now, A, x, y, iter_index, tag)
            self._await(fut_reduce, "overlapped reduction", iter_index)
            self._await(fut_spmv, f"overlapped matvec {tag!r}", iter_index)
        else:
            self._reduce_now(batch, ticket)
            self._spmv_now(A, x, y, iter_index, tag)
        return ticket, y

    def spmv(
        self,
        A: CsrMatrix,
        x: np.ndarray,
        iter_index: int,
        tag: str,
        out: np.ndarray | None = None,
    ) -> np.ndarray:
        """Logged y = A @ x; threaded mode partitions rows across the pool.

        Row ranges write disjoint output slices, so the partitioned result
        is bitwise identical to the single-call kernel.
        """
        if x.shape != (A.n_cols,):
            raise ValueError(f"dimension mismatch: A is {A.shape}, x has {x.shape}")
        y = np.empty(A.n_rows) if out is None else out
        self.log.append(iter_index, SPMV_START, tag)
        if (
            self.mode == "threaded"
            and self.plan.worker_count > 1
            and A.n_rows == self.plan.n
        ):
            pool = self._ensure_pool()
            futures = [
                pool.submit(
                    kn.spmv_range, A.row_ptr, A.col_idx, A.values, x, y, lo, hi
                )
                for lo, hi in self.plan.ranges
            ]
            for f in futures:
                self._await(f, "partitioned matvec", iter_index)
        else:
            kn.spmv_range(A.row_ptr, A.col_idx, A.values, x, y, 0, A.n_rows)
        check_finite(y, f"matvec {tag!r} output row")
        self.log.append(iter_index, SPMV_END, tag)
        return y

    def plan_dot(self, x: np.ndarray, y: np.ndarray) -> float:
        """Unlogged dot product using the plan's ranges and combine chain.

        Matches the batch reduction bitwise; used by drift monitors and
        final residual evaluations that must agree with batch values.
        """
        acc = kn.dot_range(x, y, *self.plan.ranges[0])
        for lo, hi in self.plan.ranges[1:]:
            acc = acc + kn.dot_range(x, y, lo, hi)
        return acc


@dataclass
class PhaseOrderReport:
    """Outcome of checking the event log against a method's schedule."""

    method: str
    iterations_checked: int
    ok: bool
    violations: list[str] = field(default_factory=list)


_PHASES_PER_ITER = {
    "bicgstab": 2,
    "gpbicg": 3,
    "ssbicgsafe2": 1,
    "pbicgsafe": 1,
    "pbicgsafe-rr": 1,
}


def verify_phase_order(log: EventLog, method: str) -> PhaseOrderReport:
    """Assert the per-iteration reduction/SpMV schedule for a method.

    Checks, per iteration recorded in the log (setup events at iter < 0
    are ignored): the expected number of reduce phases, and the ordering
    that defines each method's schedule; for the single-reduction methods,
    that the lone reduction overlaps (pbicgsafe: starts before the
    spine product ends) or follows its producer (ssbicgsafe2: starts only
    after A r is complete).
    """
    if method not in _PHASES_PER_ITER:
        raise ValueError(f"unknown method {method!r}")
    expected_phases = _PHASES_PER_ITER[method]
    by_iter: dict[int, list[ExecutionEvent]] = {}
    for ev in log.events():
        if ev.iter >= 0:
            by_iter.setdefault(ev.iter, []).append(ev)
    violations: list[str] = []

    def seq_of(evs, kind, tag=None, which=0):
        found = [e.seq for e in evs if e.kind == kind and (tag is None or e.tag == tag)]
        return found[which] if len(found) > which else None

    for it in sorted(by_iter):
        evs = by_iter[it]
        starts = [e.seq for e in evs if e.kind == REDUCE_START]
        if len(starts) != expected_phases:
            violations.append(
                f"iter {it}: {len(starts)} reduce phases, expected {expected_phases}"
            )
            continue
        if method in ("pbicgsafe", "pbicgsafe-rr"):
            spine_end = seq_of(evs, SPMV_END, "As")
            if spine_end is None:
                violations.append(f"iter {it}: no 'As' product recorded")
            elif not starts[0] < spine_end:
                violations.append(
                    f"iter {it}: reduction started at seq {starts[0]}, after "
                    f"'As' ended at seq {spine_end} (no overlap)"
                )
        elif method == "ssbicgsafe2":
            producer_end = seq_of(evs, SPMV_END, "Ar")
            if producer_end is None:
                violations.append(f"iter {it}: no 'Ar' product recorded")
            elif not producer_end < starts[0]:
                violations.append(
                    f"iter {it}: reduction started at seq {starts[0]} before "
                    f"'Ar' ended at seq {producer_end}"
                )
        elif method == "bicgstab":
            for tag, start in (("Ap", starts[0]), ("At", starts[1])):
                end = seq_of(evs, SPMV_END, tag)
                if end is None:
                    violations.append(f"iter {it}: no {tag!r} product recorded")
                elif not end < start:
                    violations.append(
                        f"iter {it}: phase at seq {start} not after {tag!r} "
                        f"end at seq {end}"
                    )
        elif method == "gpbicg":
            for tag, start in (("Ap", starts[0]), ("At", starts[1])):
                end = seq_of(evs, SPMV_END, tag)
                if end is None:
                    violations.append(f"iter {it}: no {tag!r} product recorded")
                elif not end < start:
                    violations.append(
                        f"iter {it}: phase at seq {start} not after {tag!r} "
                        f"end at seq {end}"
                    )
            if not starts[1] < starts[2]:
                violations.append(f"iter {it}: third phase out of order")

    return PhaseOrderReport(
        method=method,
        iterations_checked=len(by_iter),
        ok=not violations,
        violations=violations,
    )
