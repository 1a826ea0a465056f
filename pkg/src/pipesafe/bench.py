"""Microbenchmarks comparing the compiled and pure-numpy kernel backends.

Times the two operations that dominate a solver iteration: the sparse
matrix-vector product and a fused nine-pair dot batch over the full
vector length.  Each backend is warmed up before timing so compilation
cost never lands in a sample; the reported figure is the median of the
repeats.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from time import perf_counter

import numpy as np

from . import kernels as kn
from .linalg import gen_poisson


@dataclass
class BenchResult:
    backend: str
    op: str
    n: int
    nnz: int
    repeats: int
    median_s: float
    best_s: float

    def as_dict(self) -> dict:
        return {
            "backend": self.backend,
            "op": self.op,
            "n": self.n,
            "nnz": self.nnz,
            "repeats": self.repeats,
            "median_s": self.median_s,
            "best_s": self.best_s,
        }


def _time(fn, repeats: int) -> tuple[float, float]:
    fn()  # warm call outside the samples
    samples = []
    for _ in range(repeats):
        t0 = perf_counter()
        fn()
        samples.append(perf_counter() - t0)
    return statistics.median(samples), min(samples)


def run_bench(size: int = 200, repeats: int = 9, backends=None) -> dict:
    """Time spmv and a nine-dot fused batch on a 2-D grid operator.

    size is the grid edge, so the operator has size**2 rows.  Returns a
    dict with one result row per (backend, op) and the numba-over-numpy
    speedup per op when both backends are available.
    """
    A, _meta = gen_poisson(2, size)
    n = A.n_rows
    rng = np.random.default_rng(1234)
    x = rng.standard_normal(n)
    out = np.empty(n)
    vecs = [rng.standard_normal(n) for _ in range(4)]

    chosen = tuple(backends) if backends else kn.available_backends()
    rows: list[BenchResult] = []
    for backend in chosen:
        prev = kn.set_backend(backend)
        try:
            kn.warmup()

            def spmv_op():
                kn.spmv_range(A.row_ptr, A.col_idx, A.values, x, out, 0, n)

            def batch_op():
                # nine dots, as in the fused single-reduction batch
                acc = 0.0
                for a, b in (
                    (vecs[0], vecs[0]), (vecs[1], vecs[1]), (vecs[0], vecs[1]),
                    (vecs[0], vecs[2]), (vecs[1], vecs[2]), (vecs[3], vecs[2]),
                    (vecs[3], vecs[0]), (vecs[3], vecs[1]), (vecs[2], vecs[2]),
                ):
                    acc += kn.dot_range(a, b, 0, n)
                return acc

            for op_name, op in (("spmv", spmv_op), ("dot_batch9", batch_op)):
                median_s, best_s = _time(op, repeats)
                rows.append(
                    BenchResult(backend, op_name, n, A.nnz, repeats, median_s, best_s)
                )
        finally:
            kn.set_backend(prev)

    by_op: dict[str, dict[str, float]] = {}
    for row in rows:
        by_op.setdefault(row.op, {})[row.backend] = row.median_s
    speedups = {
        op: medians["numpy"] / medians["numba"]
        for op, medians in by_op.items()
        if "numpy" in medians and "numba" in medians and medians["numba"] > 0
    }
    return {
        "n": n,
        "nnz": A.nnz,
        "repeats": repeats,
        "results": [r.as_dict() for r in rows],
        "speedup_numba_over_numpy": speedups,
    }
