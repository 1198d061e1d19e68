"""Closed-form constants and probability bounds used by the growth argument.

``derive_profile`` does its case analysis in exact rational arithmetic on the
shortest decimal form of ``alpha``, so that e.g. alpha = 0.95 lands on the
integer branch ((0.95 - 0.5) / 0.05 = 9) instead of 8.999... in binary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import integrate

from .errors import InvariantViolation, ValidationError

TERM_CUTOFF = 1e-18
MAX_EXPLICIT_TERMS = 2_000_000
_CHUNK = 65_536


def _exact(x: float) -> Fraction:
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class BoundsProfile:
    alpha: float
    delta: float
    k_max: int
    delta_bar: float
    beta_ladder: tuple
    beta: float
    s1: float
    conditions: dict

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "delta": self.delta,
            "K": self.k_max,
            "delta_bar": self.delta_bar,
            "beta_ladder": list(self.beta_ladder),
            "beta": self.beta,
            "s1": self.s1,
            "conditions": dict(self.conditions),
        }


def derive_profile(alpha: float, c: float = 1.0) -> BoundsProfile:
    """Constants delta, K, delta_bar and the exponent ladder for ``alpha``.

    Conditions (1)-(3) and alpha < beta < 1 are asserted. Condition (4) is
    recorded in ``conditions["c4"]`` but never raised on.
    """
    if not (math.isfinite(alpha) and 0.0 < alpha < 1.0):
        raise ValidationError("alpha", f"must lie in (0, 1), got {alpha!r}")
    if not (math.isfinite(c) and c > 0.0):
        raise ValidationError("c", f"must be > 0, got {c!r}")

    a = _exact(alpha)
    half = Fraction(1, 2)
    ratio = (a - half) / (1 - a)
    k_max = max(math.floor(ratio) + 1, 1)
    if a <= half:
        delta = (1 - a) / 2
    elif ratio.denominator == 1:
        delta = (1 - a) / 8
    else:
        delta = min((half + k_max * (1 - a) - a) / 8, (1 - a) / 8)
    ladder = [half - delta + k * (1 - a) for k in range(1, k_max + 1)]
    beta = ladder[-1]

    conditions = {
        "c1": 0 < delta < half,
        "c2": half - delta + (1 - a) > half,
        "c3": half - delta + k_max * (1 - a) > a,
        "c4": half - delta + (k_max - 1) * (1 - a) < a,
    }
    for key in ("c1", "c2", "c3"):
        if not conditions[key]:
            raise InvariantViolation(f"condition {key} fails for alpha={alpha}")
    if not a < beta < 1:
        raise InvariantViolation(f"beta={float(beta)} outside (alpha, 1) for alpha={alpha}")

    return BoundsProfile(
        alpha=float(alpha),
        delta=float(delta),
        k_max=k_max,
        delta_bar=float((1 - a - delta) / 8),
        beta_ladder=tuple(float(b) for b in ladder),
        beta=float(beta),
        s1=c / 2.0,
        conditions=conditions,
    )


def azuma_tail(m: int, delta_bar: float) -> float:
    """Bound on P(|M_m| > m**(1/2 + delta_bar)), capped at 1."""
    if m < 1:
        raise ValidationError("m", f"must be >= 1, got {m}")
    if not 0.0 < delta_bar < 0.5:
        raise ValidationError("delta_bar", f"must lie in (0, 1/2), got {delta_bar}")
    return min(1.0, 2.0 * math.exp(-(m ** (2.0 * delta_bar)) / 8.0))


def e2_window_start(n: int, eps: float) -> int:
    """First index ceil(2 * eps * n) of the martingale window, computed exactly."""
    return math.ceil(2 * _exact(eps) * int(n))


def e2_failure_mass(n: int, eps: float, delta_bar: float) -> float:
    """The unclamped union-bound mass 2n exp(-ceil(2 eps n)**(2 delta_bar) / 8)."""
    if n < 1:
        raise ValidationError("n", f"must be >= 1, got {n}")
    if not 0.0 < eps < 0.5:
        raise ValidationError("eps", f"must lie in (0, 1/2), got {eps}")
    if not 0.0 < delta_bar < 0.5:
        raise ValidationError("delta_bar", f"must lie in (0, 1/2), got {delta_bar}")
    start = e2_window_start(n, eps)
    return 2.0 * n * math.exp(-(start ** (2.0 * delta_bar)) / 8.0)


def e2_union_bound(n: int, eps: float, delta_bar: float) -> float:
    """Lower bound on P(E2) from Azuma plus a union over the window."""
    return max(0.0, 1.0 - e2_failure_mass(n, eps, delta_bar))


def _gamma_tail_upper(a: float, z0: float) -> float:
    """Upper bound on the upper incomplete gamma integral of t**(a-1) e**-t over [z0, inf).

    Adaptive quadrature up to a cut z1 well past the mode, plus the envelope
    z1**(a-1) e**-z1 / (1 - (a-1)/z1) for the remainder (valid for z1 > a - 1).
    """
    z1 = max(z0, a - 1.0) + 60.0 + 4.0 * math.sqrt(max(a, 1.0))
    # scale by the integrand's log-maximum on [z0, z1] to stay in range
    mode = min(max(a - 1.0, z0), z1)
    shift = (a - 1.0) * math.log(mode) - mode if mode > 0 else 0.0

    def integrand(t):
        return math.exp((a - 1.0) * math.log(t) - t - shift)

    body, err = integrate.quad(integrand, z0, z1, limit=200, epsabs=0.0, epsrel=1e-13)
    log_rem = (a - 1.0) * math.log(z1) - z1 - math.log1p(-max(a - 1.0, 0.0) / z1)
    return math.exp(shift) * (body + abs(err)) + math.exp(log_rem)


def monotone_tail_sum(start: int, c: float, alpha: float, beta: float) -> float:
    """Certified upper bound on the sum of exp(-c k**(beta - alpha)) over k >= start."""
    if beta <= alpha:
        raise ValidationError("beta", f"must exceed alpha={alpha} for the sum to converge, got {beta}")
    if start < 1:
        raise ValidationError("start", f"must be >= 1, got {start}")
    if not (math.isfinite(c) and c > 0.0):
        raise ValidationError("c", f"must be > 0, got {c}")
    p = beta - alpha
    partial = []
    k = int(start)
    stop = k + MAX_EXPLICIT_TERMS
    while k < stop:
        ks = np.arange(k, min(k + _CHUNK, stop), dtype=np.float64)
        terms = np.exp(-c * ks**p)
        partial.append(math.fsum(terms))
        k += len(ks)
        if terms[-1] < TERM_CUTOFF:
            break
    # decreasing terms: sum_{j >= k} f(j) <= f(k) + int_k^inf f
    f_k = math.exp(-c * k**p)
    a = 1.0 / p
    z0 = c * k**p
    integral = _gamma_tail_upper(a, z0) / (p * c**a)
    total = math.fsum(partial) + f_k + integral
    return total * (1.0 + 1e-12)


def monotone_tail_bound(start: int, c: float, alpha: float, beta: float) -> float:
    """Lower bound exp(-sum) on the probability of monotone growth from ``start`` on."""
    return math.exp(-monotone_tail_sum(start, c, alpha, beta))
