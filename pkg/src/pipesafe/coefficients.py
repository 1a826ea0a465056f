"""Scalar recurrence coefficients computed from fused dot-product batches.

Each solver iteration turns its batch of dot products into step scalars.
The two-parameter (zeta, eta) pairs solve a 2x2 normal-equation system
that minimizes the next residual in the 2-norm; alpha/beta follow the
bi-Lanczos recurrences.  Denominators are guarded by a scale-invariant
breakdown test: a quantity q assembled from products p_1..p_k breaks down
when |q| <= 1e-14 * (|p_1| + ... + |p_k|), so the test is insensitive to
uniform scaling of the problem.  For a denominator that is a single
product the test degenerates to q == 0 (plus non-finite), by design.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BREAKDOWN_RTOL = 1e-14


class BreakdownError(RuntimeError):
    """A recurrence denominator vanished relative to its constituents."""

    def __init__(self, quantity: str, value: float, scale: float):
        super().__init__(
            f"breakdown in {quantity}: |{value:.3e}| <= "
            f"{BREAKDOWN_RTOL:g} * {scale:.3e}"
        )
        self.quantity = quantity
        self.value = value
        self.scale = scale


def guard_denominator(q: float, scale: float, quantity: str) -> float:
    """Raise BreakdownError when q is non-finite or vanishes against scale."""
    if not np.isfinite(q) or abs(q) <= BREAKDOWN_RTOL * scale:
        raise BreakdownError(quantity, q, scale)
    return q


@dataclass
class CoefficientSet:
    """Step scalars of one iteration (omega for the two-phase method)."""

    alpha: float
    beta: float
    zeta: float | None = None
    eta: float | None = None
    omega: float | None = None

    def finite(self) -> bool:
        return all(
            np.isfinite(v)
            for v in (self.alpha, self.beta, self.zeta, self.eta, self.omega)
            if v is not None
        )


def compute_alpha_beta_safe(
    f: float,
    f_prev: float,
    g: float,
    h: float,
    alpha_prev: float,
    zeta_prev: float,
    first_iter: bool,
) -> tuple[float, float]:
    """alpha and beta of the single-reduction family.

    First iteration: beta = 0, alpha = f / g.  Afterwards
    beta = (alpha_prev * f) / (zeta_prev * f_prev) and
    alpha = f / (g + beta * h), with f = (r0*, r), g = (r0*, s),
    h = (r0*, t_prev).
    """
    if first_iter:
        guard_denominator(g, abs(g), "initial alpha denominator (r0*, s)")
        return f / g, 0.0
    denom_beta = zeta_prev * f_prev
    guard_denominator(denom_beta, abs(denom_beta), "beta denominator zeta_prev * f_prev")
    beta = (alpha_prev * f) / denom_beta
    denom_alpha = g + beta * h
    guard_denominator(denom_alpha, abs(g) + abs(beta * h), "alpha denominator g + beta*h")
    return f / denom_alpha, beta


def compute_zeta_eta_safe(
    a: float, b: float, c: float, d: float, e: float, first_iter: bool
) -> tuple[float, float]:
    """Damping pair minimizing ||r - zeta*s - eta*y||_2.

    Normal equations with a = (s,s), b = (y,y), c = (s,y), d = (s,r),
    e = (y,r):

        zeta = (b*d - c*e) / (a*b - c^2)
        eta  = (a*e - c*d) / (a*b - c^2)

    First iteration (or y identically zero, which makes b = c = e = 0):
    zeta = d / a, eta = 0.
    """
    if first_iter or (b == 0.0 and c == 0.0 and e == 0.0):
        guard_denominator(a, abs(a), "zeta denominator (s, s)")
        return d / a, 0.0
    det = a * b - c * c
    guard_denominator(det, abs(a * b) + c * c, "zeta/eta denominator a*b - c^2")
    return (b * d - c * e) / det, (a * e - c * d) / det


def compute_zeta_eta_gpbicg(
    a: float, b: float, c: float, d: float, e: float, first_iter: bool
) -> tuple[float, float]:
    """Damping pair minimizing ||t - eta*y - zeta*(A t)||_2.

    Here a = (y,y), b = (At,t), c = (y,t), d = (At,y), e = (At,At):

        zeta = (a*b - c*d) / (e*a - d^2)
        eta  = (e*c - d*b) / (e*a - d^2)

    First iteration (y is zero): zeta = b / e, eta = 0.  When both basis
    vectors vanish (e = 0 too, so A t = 0 alongside y = 0) every pair
    minimizes the norm; (0, 0) is returned so the caller's residual
    update degenerates to r = t, and the half-step convergence or true
    breakdown is decided by the residual norm that follows.
    """
    if first_iter or (a == 0.0 and c == 0.0 and d == 0.0):
        if e == 0.0:
            return 0.0, 0.0
        guard_denominator(e, abs(e), "zeta denominator (At, At)")
        return b / e, 0.0
    det = e * a - d * d
    guard_denominator(det, abs(e * a) + d * d, "zeta/eta denominator e*a - d^2")
    return (a * b - c * d) / det, (e * c - d * b) / det
