"""Low-level numeric kernels with two interchangeable backends.

The compiled backend wraps each kernel in numba's ``@njit`` (nogil so the
scheduler can genuinely overlap work across threads, cache so compilation
is paid once per machine).  The fallback backend is pure numpy.  The
active backend is chosen at import time from the ``PIPESAFE_BACKEND``
environment variable ("numba" or "numpy"; default numba when importable)
and can be switched at runtime with :func:`set_backend`, which the
benchmark uses to time both paths in one process.

Each backend is bitwise-reproducible run to run: the compiled kernels
accumulate in a fixed ascending order, the numpy reductions are
deterministic for fixed inputs.  The two backends agree to the last few
ULPs but are not required to match bitwise (numpy may associate sums
differently), so a solve should stay on one backend.

Call sites should use ``from . import kernels as kn`` and call through
the module so :func:`set_backend` takes effect everywhere.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only where numba is absent
    njit = None
    HAS_NUMBA = False

ENV_BACKEND = "PIPESAFE_BACKEND"


# ---------------------------------------------------------------------------
# numpy backend


def _spmv_range_np(row_ptr, col_idx, values, x, out, lo, hi):
    base = row_ptr[lo]
    end = row_ptr[hi]
    prod = values[base:end] * x[col_idx[base:end]]
    seg = out[lo:hi]
    if prod.size == 0:
        seg[:] = 0.0
        return
    starts = row_ptr[lo:hi] - base
    ends = row_ptr[lo + 1 : hi + 1] - base
    # reduceat quirks: a segment whose start index equals the array length
    # is invalid, and an empty segment returns prod[start] instead of 0.
    valid = starts < prod.size
    seg[:] = 0.0
    seg[valid] = np.add.reduceat(prod, starts[valid])
    seg[ends == starts] = 0.0


def _dot_range_np(x, y, lo, hi):
    return float(np.add.reduce(x[lo:hi] * y[lo:hi]))


def _lincomb2_np(out, sa, a, sb, b):
    out[:] = sa * a + sb * b


def _lincomb3_np(out, sa, a, sb, b, sc, c):
    out[:] = sa * a + sb * b + sc * c


def _lincomb4_np(out, sa, a, sb, b, sc, c, sd, d):
    out[:] = sa * a + sb * b + sc * c + sd * d


def _lincomb_nested_np(out, sa, a, sb, b, sc, c):
    out[:] = sa * a + sb * (b + sc * c)


def _add_scaled_diff_np(out, base, s, a, b):
    out[:] = base + s * (a - b)


def _add_scaled_damped_diff_np(out, base, s, a, w, b):
    out[:] = base + s * (a - w * b)


# ---------------------------------------------------------------------------
# numba backend: scalar loops, same association per element as the numpy
# expressions above, accumulation strictly in ascending index order.

if HAS_NUMBA:

    @njit(cache=True, nogil=True)
    def _spmv_range_nb(row_ptr, col_idx, values, x, out, lo, hi):
        for i in range(lo, hi):
            acc = 0.0
            for k in range(row_ptr[i], row_ptr[i + 1]):
                acc += values[k] * x[col_idx[k]]
            out[i] = acc

    @njit(cache=True, nogil=True)
    def _dot_range_nb(x, y, lo, hi):
        acc = 0.0
        for k in range(lo, hi):
            acc += x[k] * y[k]
        return acc

    @njit(cache=True, nogil=True)
    def _lincomb2_nb(out, sa, a, sb, b):
        for i in range(out.shape[0]):
            out[i] = sa * a[i] + sb * b[i]

    @njit(cache=True, nogil=True)
    def _lincomb3_nb(out, sa, a, sb, b, sc, c):
        for i in range(out.shape[0]):
            out[i] = sa * a[i] + sb * b[i] + sc * c[i]

    @njit(cache=True, nogil=True)
    def _lincomb4_nb(out, sa, a, sb, b, sc, c, sd, d):
        for i in range(out.shape[0]):
            out[i] = sa * a[i] + sb * b[i] + sc * c[i] + sd * d[i]

    @njit(cache=True, nogil=True)
    def _lincomb_nested_nb(out, sa, a, sb, b, sc, c):
        for i in range(out.shape[0]):
            out[i] = sa * a[i] + sb * (b[i] + sc * c[i])

    @njit(cache=True, nogil=True)
    def _add_scaled_diff_nb(out, base, s, a, b):
        for i in range(out.shape[0]):
            out[i] = base[i] + s * (a[i] - b[i])

    @njit(cache=True, nogil=True)
    def _add_scaled_damped_diff_nb(out, base, s, a, w, b):
        for i in range(out.shape[0]):
            out[i] = base[i] + s * (a[i] - w * b[i])


_KERNEL_NAMES = (
    "spmv_range",
    "dot_range",
    "lincomb2",
    "lincomb3",
    "lincomb4",
    "lincomb_nested",
    "add_scaled_diff",
    "add_scaled_damped_diff",
)

_TABLES = {
    "numpy": {
        "spmv_range": _spmv_range_np,
        "dot_range": _dot_range_np,
        "lincomb2": _lincomb2_np,
        "lincomb3": _lincomb3_np,
        "lincomb4": _lincomb4_np,
        "lincomb_nested": _lincomb_nested_np,
        "add_scaled_diff": _add_scaled_diff_np,
        "add_scaled_damped_diff": _add_scaled_damped_diff_np,
    }
}

if HAS_NUMBA:
    _TABLES["numba"] = {
        "spmv_range": _spmv_range_nb,
        "dot_range": _dot_range_nb,
        "lincomb2": _lincomb2_nb,
        "lincomb3": _lincomb3_nb,
        "lincomb4": _lincomb4_nb,
        "lincomb_nested": _lincomb_nested_nb,
        "add_scaled_diff": _add_scaled_diff_nb,
        "add_scaled_damped_diff": _add_scaled_damped_diff_nb,
    }

_active_backend = ""


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_TABLES))


def active_backend() -> str:
    """Name of the backend currently bound to the module-level kernels."""
    return _active_backend


def set_backend(name: str) -> str:
    """Bind the named backend's kernels to the module-level names.

    Returns the previously active backend so callers can restore it.
    """
    global _active_backend
    if name not in _TABLES:
        raise ValueError(
            f"unknown backend {name!r}; available: {', '.join(available_backends())}"
        )
    previous = _active_backend
    for fname, fn in _TABLES[name].items():
        globals()[fname] = fn
    _active_backend = name
    return previous


def _initial_backend() -> str:
    requested = os.environ.get(ENV_BACKEND, "").strip().lower()
    if requested:
        if requested not in _TABLES:
            raise ImportError(
                f"{ENV_BACKEND}={requested!r} is not available; "
                f"choose one of: {', '.join(available_backends())}"
            )
        return requested
    return "numba" if HAS_NUMBA else "numpy"


set_backend(_initial_backend())


def warmup(n: int = 4) -> None:
    """Run every kernel once on tiny inputs to trigger jit compilation."""
    rp = np.arange(n + 1, dtype=np.int64)
    ci = np.arange(n, dtype=np.int64)
    v = np.ones(n)
    x = np.ones(n)
    out = np.empty(n)
    spmv_range(rp, ci, v, x, out, 0, n)  # noqa: F821 - bound by set_backend
    dot_range(x, v, 0, n)  # noqa: F821
    lincomb2(out, 1.0, x, 1.0, v)  # noqa: F821
    lincomb3(out, 1.0, x, 1.0, v, 1.0, x)  # noqa: F821
    lincomb4(out, 1.0, x, 1.0, v, 1.0, x, 1.0, v)  # noqa: F821
    lincomb_nested(out, 1.0, x, 1.0, v, 1.0, x)  # noqa: F821
    add_scaled_diff(out, x, 1.0, v, x)  # noqa: F821
    add_scaled_damped_diff(out, x, 1.0, v, 1.0, x)  # noqa: F821
