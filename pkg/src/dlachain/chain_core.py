"""Exact dynamics of the toy arm-growth chain.

The chain starts from D_0 = 0, D_1 = 1. For n >= 1 and D_n > 0 it steps
down with probability ``0.5 * exp(-c * D_n / n**alpha)`` and up otherwise;
from D_n = 0 it always steps up.

Every transition consumes one uniform variate ``u`` and the rule
``u < p_down => down`` is fixed. The coupled reflected walk |S_n| reads the
same ``u`` and steps down iff ``u < 1/2`` (and always up from 0), so the
chain dominates the walk pathwise.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numba as nb
import numpy as np

from .errors import ResourceCapError, ValidationError
from .rng import check_seed, stream

DP_CAP = 2000
HORIZON_MAX = 2**62
# 0.5 * exp(-40) < 2**-53, the smallest positive uniform double, and
# -expm1(-x) rounds to exactly 1.0 for x > 40. Skipping exp past this point
# does not change any result.
_SATURATED = 40.0


@dataclass(frozen=True)
class ChainParams:
    alpha: float
    c: float
    allow_degenerate_c0: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and 0.0 < self.alpha < 1.0):
            raise ValidationError("alpha", f"must lie in (0, 1), got {self.alpha!r}")
        if not math.isfinite(self.c):
            raise ValidationError("c", f"must be finite, got {self.c!r}")
        if self.allow_degenerate_c0:
            if self.c < 0.0:
                raise ValidationError("c", f"must be >= 0, got {self.c!r}")
        elif self.c <= 0.0:
            raise ValidationError(
                "c", f"must be > 0 (set allow_degenerate_c0 for c = 0), got {self.c!r}"
            )


@dataclass(frozen=True)
class ChainState:
    n: int
    d: int

    def __post_init__(self):
        if self.n < 0 or self.d < 0:
            raise ValidationError("state", f"n and d must be non-negative, got {self}")
        if self.d > self.n:
            raise ValidationError("state", f"d cannot exceed n, got {self}")


@dataclass
class Trajectory:
    """A realised path D_0..D_N with its Doob parts and coupled walk.

    ``a`` and ``m`` are the predictable and martingale parts, with
    ``m = d - a`` computed elementwise so the identity holds exactly.
    ``s_abs`` is the coupled reflected walk, or None when not requested.
    """

    params: ChainParams
    seed: int
    d: np.ndarray
    a: Optional[np.ndarray] = None
    m: Optional[np.ndarray] = None
    s_abs: Optional[np.ndarray] = None

    @property
    def horizon(self) -> int:
        return len(self.d) - 1

    def to_csv(self) -> str:
        columns = [("step", np.arange(len(self.d))), ("d", self.d)]
        if self.a is not None:
            columns += [("a", self.a), ("m", self.m)]
        if self.s_abs is not None:
            columns.append(("s_abs", self.s_abs))
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([name for name, _ in columns])
        for row in zip(*(col.tolist() for _, col in columns)):
            writer.writerow([repr(v) for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        out = {
            "alpha": self.params.alpha,
            "c": self.params.c,
            "seed": self.seed,
            "d": self.d.tolist(),
        }
        if self.a is not None:
            out["a"] = self.a.tolist()
            out["m"] = self.m.tolist()
        if self.s_abs is not None:
            out["s_abs"] = self.s_abs.tolist()
        return out


@dataclass
class ExactDistribution:
    n: int
    probs: dict = field(default_factory=dict)

    def as_array(self) -> np.ndarray:
        out = np.zeros(self.n + 1)
        for k, p in self.probs.items():
            out[k] = p
        return out

    def tail(self, k: int) -> float:
        """P(D_n >= k)."""
        return math.fsum(p for j, p in self.probs.items() if j >= k)


def transition_probs(state: ChainState, params: ChainParams) -> tuple[float, float]:
    """Return ``(p_up, p_down)`` for the move out of ``state``."""
    if state.n < 1:
        raise ValidationError("n", "transitions are defined for n >= 1 only (D_1 = 1 is fixed)")
    if state.d == 0:
        return 1.0, 0.0
    p_down = 0.5 * math.exp(-params.c * state.d / state.n**params.alpha)
    return 1.0 - p_down, p_down


def step(state: ChainState, params: ChainParams, u: float) -> ChainState:
    _, p_down = transition_probs(state, params)
    if state.d > 0 and u < p_down:
        return ChainState(state.n + 1, state.d - 1)
    return ChainState(state.n + 1, state.d + 1)


@nb.njit(cache=True, inline="always")
def _drift(x):
    # A_{i+1} - A_i for D_i > 0, where x = c * D_i / i**alpha
    if x > _SATURATED:
        return 1.0
    return -math.expm1(-x)


@nb.njit(cache=True, inline="always")
def _goes_down(d, x, u):
    # chain rule at D_i = d > 0 with x = c * d / i**alpha
    if u >= 0.5:
        return False
    if x > _SATURATED and u > 0.0:
        return False
    return u < 0.5 * math.exp(-x)


@nb.njit(cache=True)
def _path_kernel(u, alpha, c, with_coupling, with_doob):
    horizon = u.shape[0] + 1
    d = np.empty(horizon + 1, np.int64)
    s = np.empty(horizon + 1 if with_coupling else 0, np.int64)
    a = np.empty(horizon + 1 if with_doob else 0, np.float64)
    d[0] = 0
    d[1] = 1
    if with_coupling:
        s[0] = 0
        s[1] = 1
    if with_doob:
        a[0] = 0.0
        a[1] = 1.0
    for i in range(1, horizon):
        ui = u[i - 1]
        di = d[i]
        if di == 0:
            d[i + 1] = 1
            if with_doob:
                a[i + 1] = a[i] + 1.0
        else:
            x = c * di / i**alpha
            d[i + 1] = di - 1 if _goes_down(di, x, ui) else di + 1
            if with_doob:
                a[i + 1] = a[i] + _drift(x)
        if with_coupling:
            si = s[i]
            s[i + 1] = si - 1 if (si > 0 and ui < 0.5) else si + 1
    return d, a, s


def uniforms(seed: int, horizon: int) -> np.ndarray:
    """Uniform stream for a trajectory: entry ``k`` drives the move out of n = k + 1."""
    return stream(seed).random(horizon - 1)


def simulate(
    params: ChainParams,
    horizon: int,
    seed: int,
    with_coupling: bool = False,
    with_doob: bool = True,
) -> Trajectory:
    horizon = int(horizon)
    if horizon < 1:
        raise ValidationError("horizon", f"must be >= 1, got {horizon}")
    if horizon >= HORIZON_MAX:
        raise ResourceCapError(f"horizon {horizon} overflows the step index type")
    seed = check_seed(seed)
    d, a, s = _path_kernel(uniforms(seed, horizon), params.alpha, params.c, with_coupling, with_doob)
    traj = Trajectory(params=params, seed=seed, d=d)
    if with_doob:
        if not np.all(np.isfinite(a)):
            raise ValidationError("c", "drift produced non-finite values")
        traj.a = a
        traj.m = d - a
    if with_coupling:
        traj.s_abs = s
    return traj


def exact_distribution(params: ChainParams, horizon: int, cap: int = DP_CAP) -> ExactDistribution:
    """Law of D_horizon by forward propagation of the transition kernel.

    Runs over the whole (i, d) triangle with no truncation; O(horizon**2).
    """
    horizon = int(horizon)
    if horizon < 1:
        raise ValidationError("horizon", f"must be >= 1, got {horizon}")
    if horizon > cap:
        raise ResourceCapError(f"horizon {horizon} exceeds the DP cap {cap}")
    p = np.zeros(horizon + 1)
    p[1] = 1.0
    k = np.arange(horizon + 1)
    for i in range(1, horizon):
        # p is supported on 0..i
        live = k[1 : i + 1]
        p_down = 0.5 * np.exp(-params.c * live / i**params.alpha)
        nxt = np.zeros_like(p)
        nxt[1] += p[0]
        nxt[2 : i + 2] += p[1 : i + 1] * (1.0 - p_down)
        nxt[0 : i] += p[1 : i + 1] * p_down
        p = nxt
    return ExactDistribution(horizon, {int(j): float(p[j]) for j in np.flatnonzero(p)})
