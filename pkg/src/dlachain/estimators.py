"""Monte Carlo ensembles and per-trajectory estimators.

Trajectory ``i`` of an ensemble is driven by ``stream(split_seed(base_seed, i))``,
exactly as ``simulate`` would drive it, so any member can be replayed alone.
All per-trajectory statistics are folded in one pass by a compiled kernel;
partial summaries hold only integer counts, histograms and exact rational
sums, so merging them is associative and order-free to the last bit.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numba as nb
import numpy as np
from scipy import stats

from .bounds import e2_window_start
from .chain_core import ChainParams, Trajectory, _drift, _goes_down
from .errors import ResourceCapError, ValidationError
from .rng import check_seed, split_seed, stream

WILSON_Z = 1.959963984540054
MAX_WORK = 5 * 10**9
_BLOCK_CELLS = 1 << 22


def exact_sum(values) -> Fraction:
    """Exact sum of a float array, as a Fraction.

    Each double is split into an integer mantissa and a binary exponent;
    mantissas sharing an exponent are summed as integers.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        return Fraction(0)
    if not np.all(np.isfinite(x)):
        raise ValueError("exact_sum needs finite values")
    frac, expo = np.frexp(x)
    mant = (frac * 2.0**53).astype(np.int64)
    expo = expo.astype(np.int64) - 53
    total = Fraction(0)
    for e in np.unique(expo):
        mm = mant[expo == e]
        s = int((mm >> 26).sum()) * 2**26 + int((mm & (2**26 - 1)).sum())
        total += Fraction(s) * Fraction(2) ** int(e)
    return total


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z) -> tuple[float, float]:
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    # rounding can push an endpoint past p when p is 0 or 1
    return max(0.0, min(centre - half, p)), min(1.0, max(centre + half, p))


def binomial_stderr(successes: int, trials: int) -> float:
    p = successes / trials
    return math.sqrt(p * (1 - p) / trials)


# ---------------------------------------------------------------------------
# per-trajectory estimators


def occupation_fraction(traj: Trajectory, n: int, delta: float) -> float:
    """Fraction of 0 < m <= n with D_m >= m**(1/2 - delta)."""
    if not 1 <= n <= traj.horizon:
        raise ValidationError("n", f"must lie in [1, {traj.horizon}], got {n}")
    m = np.arange(1, n + 1)
    return int(np.count_nonzero(traj.d[1 : n + 1] >= m ** (0.5 - delta))) / n


def fixed_level_occupation(traj: Trajectory, n: int, level: float) -> float:
    """Fraction of 0 < m <= n with D_m >= level (one level for every m)."""
    if not 1 <= n <= traj.horizon:
        raise ValidationError("n", f"must lie in [1, {traj.horizon}], got {n}")
    return int(np.count_nonzero(traj.d[1 : n + 1] >= level)) / n


def event_e1(traj: Trajectory, n: int, eps: float, delta: float) -> bool:
    return occupation_fraction(traj, n, delta) >= 1.0 - eps


def event_e2(traj: Trajectory, n: int, eps: float, delta_bar: float) -> bool:
    """|M_j| <= j**(1/2 + delta_bar) for every integer j in [ceil(2 eps n), n]."""
    if traj.m is None:
        raise ValidationError("trajectory", "event_e2 needs the Doob parts (simulate with_doob=True)")
    if not 1 <= n <= traj.horizon:
        raise ValidationError("n", f"must lie in [1, {traj.horizon}], got {n}")
    lo = max(e2_window_start(n, eps), 0)
    if lo > n:
        return True
    j = np.arange(lo, n + 1)
    return bool(np.all(np.abs(traj.m[lo : n + 1]) <= j ** (0.5 + delta_bar)))


def freeze_time(traj: Trajectory) -> Optional[int]:
    """Largest n with D_{n+1} != D_n + 1, or None if the path only ever went up.

    The value is right-censored at the horizon: a later descent is unobserved.
    """
    descents = np.flatnonzero(np.diff(traj.d) != 1)
    return int(descents[-1]) if descents.size else None


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True)
class EnsembleSpec:
    params: ChainParams
    horizon: int
    trajectories: int
    base_seed: int
    checkpoints: tuple
    eps: float = 0.05
    delta: float = 0.25
    delta_bar: float = 0.03125
    s_scale: float = 0.5
    beta: float = 0.75

    def __post_init__(self):
        object.__setattr__(self, "checkpoints", tuple(int(n) for n in self.checkpoints))
        if self.horizon < 1:
            raise ValidationError("horizon", f"must be >= 1, got {self.horizon}")
        if self.trajectories < 1:
            raise ValidationError("trajectories", f"must be >= 1, got {self.trajectories}")
        check_seed(self.base_seed)
        cps = self.checkpoints
        if not cps or list(cps) != sorted(set(cps)) or cps[0] < 1 or cps[-1] > self.horizon:
            raise ValidationError("checkpoints", f"must be sorted, distinct and within [1, {self.horizon}]")
        if not 0.0 < self.eps < 1.0:
            raise ValidationError("eps", f"must lie in (0, 1), got {self.eps}")
        if not 0.0 < self.delta < 0.5:
            raise ValidationError("delta", f"must lie in (0, 1/2), got {self.delta}")
        if not 0.0 < self.delta_bar < 0.5:
            raise ValidationError("delta_bar", f"must lie in (0, 1/2), got {self.delta_bar}")
        if not self.s_scale > 0.0:
            raise ValidationError("s_scale", f"must be > 0, got {self.s_scale}")
        if not math.isfinite(self.beta):
            raise ValidationError("beta", f"must be finite, got {self.beta}")


@dataclass
class CheckpointStats:
    n: int
    ge_count: int = 0
    e1_count: int = 0
    e2_count: int = 0
    descent_after: int = 0
    cond_count: int = 0
    cond_monotone: int = 0
    cond_p_up: Fraction = Fraction(0)
    m_sum: Fraction = Fraction(0)
    m_sumsq: Fraction = Fraction(0)
    d_hist: Counter = field(default_factory=Counter)
    occ_hist: Counter = field(default_factory=Counter)

    def merged(self, other: "CheckpointStats") -> "CheckpointStats":
        assert self.n == other.n
        return CheckpointStats(
            n=self.n,
            ge_count=self.ge_count + other.ge_count,
            e1_count=self.e1_count + other.e1_count,
            e2_count=self.e2_count + other.e2_count,
            descent_after=self.descent_after + other.descent_after,
            cond_count=self.cond_count + other.cond_count,
            cond_monotone=self.cond_monotone + other.cond_monotone,
            cond_p_up=self.cond_p_up + other.cond_p_up,
            m_sum=self.m_sum + other.m_sum,
            m_sumsq=self.m_sumsq + other.m_sumsq,
            d_hist=self.d_hist + other.d_hist,
            occ_hist=self.occ_hist + other.occ_hist,
        )


def _hist_quantile(hist: Counter, q: float) -> int:
    """Smallest key whose cumulative count reaches q of the total."""
    total = sum(hist.values())
    need = max(1, math.ceil(q * total))
    run = 0
    for key in sorted(hist):
        run += hist[key]
        if run >= need:
            return key
    raise ValueError("empty histogram")


@dataclass
class EnsembleSummary:
    spec: EnsembleSpec
    trajectories: int
    checkpoints: list
    freeze_hist: Counter = field(default_factory=Counter)

    def merge(self, other: "EnsembleSummary") -> "EnsembleSummary":
        if self.spec != other.spec:
            raise ValueError("cannot merge summaries of different ensembles")
        return EnsembleSummary(
            spec=self.spec,
            trajectories=self.trajectories + other.trajectories,
            checkpoints=[a.merged(b) for a, b in zip(self.checkpoints, other.checkpoints)],
            freeze_hist=self.freeze_hist + other.freeze_hist,
        )

    def checkpoint(self, n: int) -> CheckpointStats:
        for cp in self.checkpoints:
            if cp.n == n:
                return cp
        raise KeyError(n)

    def d_distribution(self, n: int) -> dict:
        hist = self.checkpoint(n).d_hist
        return {k: hist[k] / self.trajectories for k in sorted(hist)}

    def m_mean_stderr(self, n: int) -> tuple[float, float]:
        cp = self.checkpoint(n)
        t = self.trajectories
        mean = cp.m_sum / t
        if t < 2:
            return float(mean), math.nan
        var = (cp.m_sumsq - t * mean * mean) / (t - 1)
        return float(mean), math.sqrt(float(var) / t)

    def rows(self) -> list[dict]:
        t = self.trajectories
        out = []
        for cp in self.checkpoints:
            lo, hi = wilson_interval(cp.ge_count, t)
            occ_mean = float(sum(Fraction(k * v) for k, v in cp.occ_hist.items()) / (t * cp.n))
            m_mean, m_se = self.m_mean_stderr(cp.n)
            out.append(
                {
                    "n": cp.n,
                    "p_ge_threshold": cp.ge_count / t,
                    "wilson_lo": lo,
                    "wilson_hi": hi,
                    "e1_freq": cp.e1_count / t,
                    "e2_freq": cp.e2_count / t,
                    "occ_mean": occ_mean,
                    "occ_p05": _hist_quantile(cp.occ_hist, 0.05) / cp.n,
                    "m_mean": m_mean,
                    "m_stderr": m_se,
                    "frozen_frac": (t - cp.descent_after) / t,
                }
            )
        return out

    def to_dict(self) -> dict:
        t = self.trajectories
        spec = self.spec
        never = self.freeze_hist.get(-1, 0)
        observed = Counter({k: v for k, v in self.freeze_hist.items() if k >= 0})
        freeze = {
            "right_censored_at": spec.horizon,
            "no_descent_frac": never / t,
            "descent_after_frac": {str(cp.n): cp.descent_after / t for cp in self.checkpoints},
        }
        if observed:
            freeze["last_descent_quantiles"] = {
                str(q): _hist_quantile(observed, q) for q in (0.5, 0.9, 0.99)
            }
        return {
            "spec": {
                "alpha": spec.params.alpha,
                "c": spec.params.c,
                "horizon": spec.horizon,
                "trajectories": spec.trajectories,
                "base_seed": spec.base_seed,
                "checkpoints": list(spec.checkpoints),
                "eps": spec.eps,
                "delta": spec.delta,
                "delta_bar": spec.delta_bar,
                "s_scale": spec.s_scale,
                "beta": spec.beta,
            },
            "trajectories": t,
            "checkpoints": self.rows(),
            "freeze_time": freeze,
        }


@nb.njit(cache=True)
def _fold_block(U, rows, npow, c, ckpts, occ_thr, e2_thr,
                out_d, out_m, out_occ, out_viol, out_desc, out_pup, out_last):
    horizon = npow.shape[0] - 1
    nk = ckpts.shape[0]
    for b in range(rows):
        d = 1
        a = 1.0
        occ = 1  # D_1 = 1 >= 1**(1/2 - delta)
        last_viol = -1
        last_desc = -1
        k = 0
        n = 1
        while True:
            while k < nk and ckpts[k] == n:
                out_d[b, k] = d
                out_m[b, k] = d - a
                out_occ[b, k] = occ
                out_viol[b, k] = last_viol
                if d == 0:
                    out_pup[b, k] = 1.0
                else:
                    out_pup[b, k] = 1.0 - 0.5 * math.exp(-(c * d / npow[n]))
                k += 1
            if n == horizon:
                break
            if d == 0:
                d = 1
                a += 1.0
            else:
                x = c * d / npow[n]
                if _goes_down(d, x, U[b, n - 1]):
                    d -= 1
                    last_desc = n
                else:
                    d += 1
                a += _drift(x)
            n += 1
            if d >= occ_thr[n]:
                occ += 1
            if abs(d - a) > e2_thr[n]:
                last_viol = n
        out_last[b] = last_desc
        for j in range(nk):
            out_desc[b, j] = last_desc >= ckpts[j]


def _check_work(trajectories: int, horizon: int, max_work: int):
    if trajectories * horizon > max_work:
        raise ResourceCapError(
            f"trajectories * horizon = {trajectories * horizon} exceeds the cap {max_work}"
        )


def _fill_uniforms(U: np.ndarray, base_seed: int, first: int, rows: int):
    width = U.shape[1]
    for b in range(rows):
        if width:
            stream(split_seed(base_seed, first + b)).random(out=U[b])


def run_ensemble(
    spec: EnsembleSpec,
    start: int = 0,
    stop: Optional[int] = None,
    max_work: int = MAX_WORK,
) -> EnsembleSummary:
    """Fold trajectories ``start <= i < stop`` (default: all) into a summary.

    Summaries over disjoint index ranges merge into the full-range summary.
    """
    stop = spec.trajectories if stop is None else stop
    if not 0 <= start < stop <= spec.trajectories:
        raise ValidationError("trajectories", f"bad index range [{start}, {stop})")
    _check_work(spec.trajectories, spec.horizon, max_work)
    params = spec.params
    horizon = spec.horizon
    ckpts = np.asarray(spec.checkpoints, dtype=np.int64)
    steps = np.arange(horizon + 1, dtype=np.float64)
    npow = steps**params.alpha
    occ_thr = steps ** (0.5 - spec.delta)
    e2_thr = steps ** (0.5 + spec.delta_bar)
    e2_lo = [e2_window_start(n, spec.eps) for n in spec.checkpoints]
    ge_thr = [spec.s_scale * n**spec.beta for n in spec.checkpoints]
    cond_thr = [n**spec.beta for n in spec.checkpoints]

    nk = len(ckpts)
    block = max(1, min(stop - start, _BLOCK_CELLS // max(horizon, 1)))
    U = np.empty((block, horizon - 1))
    out_d = np.empty((block, nk), np.int64)
    out_m = np.empty((block, nk))
    out_occ = np.empty((block, nk), np.int64)
    out_viol = np.empty((block, nk), np.int64)
    out_desc = np.empty((block, nk), np.bool_)
    out_pup = np.empty((block, nk))
    out_last = np.empty(block, np.int64)

    cps = [CheckpointStats(n=int(n)) for n in ckpts]
    freeze_hist: Counter = Counter()
    first = start
    while first < stop:
        rows = min(block, stop - first)
        _fill_uniforms(U, spec.base_seed, first, rows)
        _fold_block(U, rows, npow, params.c, ckpts, occ_thr, e2_thr,
                    out_d, out_m, out_occ, out_viol, out_desc, out_pup, out_last)
        for k, cp in enumerate(cps):
            n = cp.n
            d = out_d[:rows, k]
            m = out_m[:rows, k]
            occ = out_occ[:rows, k]
            cp.ge_count += int(np.count_nonzero(d >= ge_thr[k]))
            cp.e1_count += int(np.count_nonzero(occ / n >= 1.0 - spec.eps))
            cp.e2_count += int(np.count_nonzero(out_viol[:rows, k] < e2_lo[k]))
            desc = out_desc[:rows, k]
            cp.descent_after += int(np.count_nonzero(desc))
            cond = d >= cond_thr[k]
            cp.cond_count += int(np.count_nonzero(cond))
            cp.cond_monotone += int(np.count_nonzero(cond & ~desc))
            cp.cond_p_up += exact_sum(out_pup[:rows, k][cond])
            cp.m_sum += exact_sum(m)
            cp.m_sumsq += exact_sum(m * m)
            cp.d_hist.update(dict(zip(*np.unique(d, return_counts=True))))
            cp.occ_hist.update(dict(zip(*np.unique(occ, return_counts=True))))
        freeze_hist.update(dict(zip(*np.unique(out_last[:rows], return_counts=True))))
        first += rows

    for cp in cps:
        cp.d_hist = Counter({int(k): int(v) for k, v in cp.d_hist.items()})
        cp.occ_hist = Counter({int(k): int(v) for k, v in cp.occ_hist.items()})
    freeze_hist = Counter({int(k): int(v) for k, v in freeze_hist.items()})
    return EnsembleSummary(spec=spec, trajectories=stop - start, checkpoints=cps, freeze_hist=freeze_hist)


@dataclass(frozen=True)
class InsufficientSamples:
    start: int
    reason: str = "no trajectory satisfies the conditioning event"


@dataclass(frozen=True)
class ConditionalFrequency:
    start: int
    conditioned: int
    monotone: int
    frequency: float
    wilson_lo: float
    wilson_hi: float
    stderr: float
    mean_p_up: float


def conditional_monotone_frequency(spec: EnsembleSpec, start: int, summary: Optional[EnsembleSummary] = None):
    """Among paths with D_N >= N**beta, the fraction that only step up on [N, horizon].

    Reuses ``summary`` when it already has ``start`` as a checkpoint.
    """
    if not 1 <= start < spec.horizon:
        raise ValidationError("start", f"must lie in [1, {spec.horizon}), got {start}")
    if summary is None or start not in spec.checkpoints:
        spec = EnsembleSpec(**{**spec.__dict__, "checkpoints": (start,)})
        summary = run_ensemble(spec)
    cp = summary.checkpoint(start)
    if cp.cond_count == 0:
        return InsufficientSamples(start)
    lo, hi = wilson_interval(cp.cond_monotone, cp.cond_count)
    return ConditionalFrequency(
        start=start,
        conditioned=cp.cond_count,
        monotone=cp.cond_monotone,
        frequency=cp.cond_monotone / cp.cond_count,
        wilson_lo=lo,
        wilson_hi=hi,
        stderr=binomial_stderr(cp.cond_monotone, cp.cond_count),
        mean_p_up=float(cp.cond_p_up / cp.cond_count),
    )


# ---------------------------------------------------------------------------
# occupation times: chain side and Brownian oracle


@nb.njit(cache=True)
def _level_counts(U, rows, npow, c, level, out):
    horizon = npow.shape[0] - 1
    for b in range(rows):
        d = 1
        count = 1 if 1 >= level else 0
        for n in range(1, horizon):
            if d == 0:
                d = 1
            elif _goes_down(d, c * d / npow[n], U[b, n - 1]):
                d -= 1
            else:
                d += 1
            if d >= level:
                count += 1
        out[b] = count


def fixed_level_occupation_samples(
    params: ChainParams,
    n: int,
    delta: float,
    trajectories: int,
    base_seed: int,
    max_work: int = MAX_WORK,
) -> np.ndarray:
    """Per-trajectory fraction of 0 < m <= n with D_m >= n**(1/2 - delta).

    This is the walk-side statistic of the invariance-principle comparison;
    it converges in law to the Lebesgue measure of {t in [0, 1] : |B_t| >= n**-delta}
    when c = 0.
    """
    _check_work(trajectories, n, max_work)
    level = n ** (0.5 - delta)
    npow = np.arange(n + 1, dtype=np.float64) ** params.alpha
    block = max(1, min(trajectories, _BLOCK_CELLS // n))
    U = np.empty((block, n - 1))
    counts = np.empty(block, np.int64)
    out = np.empty(trajectories)
    first = 0
    while first < trajectories:
        rows = min(block, trajectories - first)
        _fill_uniforms(U, base_seed, first, rows)
        _level_counts(U, rows, npow, params.c, level, counts)
        out[first : first + rows] = counts[:rows] / n
        first += rows
    return out


@nb.njit(cache=True)
def _bm_occupation(rng, samples, coarse, fine, a, guard, out):
    sd_c = math.sqrt(fine / (coarse * fine))
    sd_f = math.sqrt(1.0 / (coarse * fine))
    z = np.empty(fine)
    for s in range(samples):
        x0 = 0.0
        count = 0
        for _ in range(coarse):
            x1 = x0 + sd_c * rng.standard_normal()
            if (x0 > 0.0) == (x1 > 0.0) and min(abs(x0), abs(x1)) > a + guard * sd_c:
                count += fine
            else:
                # Gaussian-walk bridge from x0 to x1 over `fine` steps
                acc = 0.0
                for j in range(fine):
                    acc += sd_f * rng.standard_normal()
                    z[j] = acc
                gap = z[fine - 1] - (x1 - x0)
                for j in range(fine):
                    w = x0 + z[j] - (j + 1) / fine * gap
                    if abs(w) >= a:
                        count += 1
            x0 = x1
        out[s] = count / (coarse * fine)


def brownian_occupation_samples(
    a: float,
    samples: int,
    seed: int,
    steps: int = 10**6,
    block: int = 100,
    guard: float = 6.0,
) -> np.ndarray:
    """Samples of the fraction of grid times j/steps in (0, 1] with |W| >= a.

    W is a Gaussian random walk with ``steps`` steps scaled to Brownian motion
    on [0, 1]. The walk is drawn on a coarse grid of ``steps // block`` points
    and refined by exact Gaussian bridges only on coarse intervals that cross
    zero or come within ``guard`` coarse standard deviations of the strip
    |W| < a. Skipping the other intervals changes the law by less than
    exp(-2 * guard**2) per interval.
    """
    if steps % block:
        raise ValidationError("steps", f"must be a multiple of block={block}")
    out = np.empty(samples)
    _bm_occupation(stream(seed), samples, steps // block, block, a, guard, out)
    return out


def ks_distance(x: Sequence[float], y: Sequence[float]) -> float:
    return float(stats.ks_2samp(x, y).statistic)
