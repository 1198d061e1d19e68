import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dlachain.chain_core import ChainParams, Trajectory, simulate
from dlachain.errors import ResourceCapError, ValidationError
from dlachain.estimators import (
    ConditionalFrequency,
    EnsembleSpec,
    InsufficientSamples,
    brownian_occupation_samples,
    conditional_monotone_frequency,
    event_e1,
    event_e2,
    exact_sum,
    fixed_level_occupation,
    fixed_level_occupation_samples,
    freeze_time,
    ks_distance,
    occupation_fraction,
    run_ensemble,
    wilson_interval,
)
from dlachain.rng import split_seed

from oracles import brownian_mean_occupation

PARAMS = ChainParams(0.5, 1.0)


def _synthetic(d, m=None):
    d = np.asarray(d, dtype=np.int64)
    m = None if m is None else np.asarray(m, dtype=np.float64)
    a = None if m is None else d - m
    return Trajectory(PARAMS, 0, d, a, m)


@settings(max_examples=200)
@given(st.lists(st.floats(-1e12, 1e12, allow_nan=False), max_size=200))
def test_exact_sum_matches_fractions(xs):
    assert exact_sum(xs) == sum((Fraction(x) for x in xs), Fraction(0))


def test_exact_sum_order_free():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(10_000) * 10.0 ** rng.integers(-30, 30, 10_000)
    perm = rng.permutation(x)
    assert exact_sum(x) == exact_sum(perm)
    assert exact_sum(x[:3000]) + exact_sum(x[3000:]) == exact_sum(x)


def test_wilson_interval():
    import mpmath

    mpmath.mp.dps = 30
    for k, t in [(50, 100), (3, 17), (999, 1000)]:
        z = mpmath.sqrt(2) * mpmath.erfinv(mpmath.mpf("0.95"))
        p = mpmath.mpf(k) / t
        centre = (p + z**2 / (2 * t)) / (1 + z**2 / t)
        half = z / (1 + z**2 / t) * mpmath.sqrt(p * (1 - p) / t + z**2 / (4 * t**2))
        lo, hi = wilson_interval(k, t)
        assert lo == pytest.approx(float(centre - half), rel=1e-12)
        assert hi == pytest.approx(float(centre + half), rel=1e-12)
    assert wilson_interval(0, 10)[0] == 0.0
    assert wilson_interval(10, 10)[1] == 1.0


def test_occupation_fraction_boundaries():
    # level m**(1/2 - delta) with delta = 1/4: sqrt(sqrt(m))
    d = [0, 1, 0, 1, 2, 1, 2, 1, 2, 3, 2, 1, 2, 1, 2, 1, 2, 3]
    traj = _synthetic(d)
    n = 16
    expected = sum(d[m] >= m**0.25 for m in range(1, n + 1)) / n
    assert occupation_fraction(traj, n, 0.25) == expected
    assert event_e1(traj, n, 1 - expected, 0.25)
    assert not event_e1(traj, n, 1 - expected - 1e-9, 0.25)


def test_fixed_level_occupation():
    traj = _synthetic([0, 1, 2, 3, 2, 1, 0, 1])
    assert fixed_level_occupation(traj, 7, 2) == 3 / 7
    with pytest.raises(ValidationError):
        fixed_level_occupation(traj, 8, 2)


def test_event_e2_window_and_boundary():
    n, eps, db = 100, 0.05, 0.25
    j = np.arange(n + 1)
    bound = j ** 0.75
    m = bound.copy()  # on the boundary: allowed (<=)
    d = np.zeros(n + 1, dtype=np.int64)
    assert event_e2(_synthetic(d, m), n, eps, db)
    # a violation before the window start ceil(2 eps n) = 10 is ignored
    m2 = m.copy()
    m2[9] = bound[9] + 1
    assert event_e2(_synthetic(d, m2), n, eps, db)
    m2[10] = -(bound[10] + 1e-9)
    assert not event_e2(_synthetic(d, m2), n, eps, db)


def test_event_e2_needs_doob_parts():
    traj = simulate(PARAMS, 50, 1, with_doob=False)
    with pytest.raises(ValidationError):
        event_e2(traj, 50, 0.05, 0.1)


def test_freeze_time():
    assert freeze_time(_synthetic([0, 1, 2, 3, 4])) is None
    assert freeze_time(_synthetic([0, 1, 0, 1, 2, 3])) == 1  # D_2 = D_1 - 1
    assert freeze_time(_synthetic([0, 1, 2, 1, 2, 3, 2, 3, 4])) == 5


def _spec(**kw):
    base = dict(params=PARAMS, horizon=400, trajectories=120, base_seed=77, checkpoints=(50, 100, 400))
    base.update(kw)
    return EnsembleSpec(**base)


def test_spec_validation():
    with pytest.raises(ValidationError) as err:
        _spec(checkpoints=(100, 50))
    assert err.value.key == "checkpoints"
    with pytest.raises(ValidationError):
        _spec(checkpoints=(401,))
    with pytest.raises(ValidationError):
        _spec(eps=1.5)


def test_ensemble_matches_replayed_members():
    spec = _spec()
    summary = run_ensemble(spec)
    trajs = [simulate(PARAMS, spec.horizon, split_seed(spec.base_seed, i)) for i in range(spec.trajectories)]
    for cp in summary.checkpoints:
        n = cp.n
        ds = [int(t.d[n]) for t in trajs]
        assert dict(cp.d_hist) == {k: ds.count(k) for k in set(ds)}
        assert cp.ge_count == sum(d >= spec.s_scale * n**spec.beta for d in ds)
        assert cp.e1_count == sum(event_e1(t, n, spec.eps, spec.delta) for t in trajs)
        assert cp.e2_count == sum(event_e2(t, n, spec.eps, spec.delta_bar) for t in trajs)
        assert cp.m_sum == sum(Fraction(float(t.m[n])) for t in trajs)
        occ = [round(occupation_fraction(t, n, spec.delta) * n) for t in trajs]
        assert dict(cp.occ_hist) == {k: occ.count(k) for k in set(occ)}
        ft = [freeze_time(t) for t in trajs]
        assert cp.descent_after == sum(f is not None and f >= n for f in ft)
    hist = {}
    for t in trajs:
        f = freeze_time(t)
        key = -1 if f is None else f
        hist[key] = hist.get(key, 0) + 1
    assert dict(summary.freeze_hist) == hist


def test_ensemble_is_deterministic_and_mergeable():
    spec = _spec()
    full = run_ensemble(spec)
    again = run_ensemble(spec)
    assert full.to_dict() == again.to_dict()
    cuts = sorted(random.Random(5).sample(range(1, spec.trajectories), 4))
    bounds = [0, *cuts, spec.trajectories]
    parts = [run_ensemble(spec, a, b) for a, b in zip(bounds, bounds[1:])]
    forward = parts[0]
    for p in parts[1:]:
        forward = forward.merge(p)
    backward = parts[-1]
    for p in reversed(parts[:-1]):
        backward = p.merge(backward)
    assert forward.to_dict() == full.to_dict() == backward.to_dict()
    assert forward.checkpoints == full.checkpoints


def test_ensemble_work_cap():
    with pytest.raises(ResourceCapError):
        run_ensemble(_spec(), max_work=1000)


def test_summary_rows():
    summary = run_ensemble(_spec())
    rows = summary.rows()
    assert [r["n"] for r in rows] == [50, 100, 400]
    for r in rows:
        assert r["wilson_lo"] <= r["p_ge_threshold"] <= r["wilson_hi"]
        assert 0.0 <= r["frozen_frac"] <= 1.0


def test_conditional_frequency_large_c_is_monotone():
    spec = _spec(params=ChainParams(0.5, 50.0), horizon=2000, trajectories=200, checkpoints=(100,))
    res = conditional_monotone_frequency(spec, 100)
    assert isinstance(res, ConditionalFrequency)
    assert res.conditioned > 0
    assert res.frequency == 1.0  # p_down < exp(-150) once D_N >= N**beta
    assert res.wilson_lo <= res.frequency <= res.wilson_hi


def test_conditional_frequency_insufficient_samples():
    # D_N >= N**beta is impossible when N**beta > N
    spec = _spec(beta=1.5, trajectories=20)
    res = conditional_monotone_frequency(spec, 50)
    assert isinstance(res, InsufficientSamples)
    assert res.start == 50


def test_conditional_frequency_one_step_matches_mean_up_probability():
    spec = _spec(horizon=201, trajectories=20_000, beta=0.5, checkpoints=(200,))
    res = conditional_monotone_frequency(spec, 200)
    # one step left: frequency estimates the mean conditional up-probability
    assert abs(res.frequency - res.mean_p_up) < 4 * math.sqrt(res.mean_p_up * (1 - res.mean_p_up) / res.conditioned)


def test_conditional_frequency_validates_start():
    with pytest.raises(ValidationError):
        conditional_monotone_frequency(_spec(), 400)


def test_fixed_level_samples_match_trajectories():
    params = ChainParams(0.5, 0.0, True)
    n, delta = 300, 0.1
    out = fixed_level_occupation_samples(params, n, delta, 30, base_seed=8)
    level = n ** (0.5 - delta)
    for i in range(30):
        traj = simulate(params, n, split_seed(8, i))
        assert out[i] == fixed_level_occupation(traj, n, level)


def test_brownian_occupation_mean():
    a = 0.2
    samples = brownian_occupation_samples(a, 2000, seed=3, steps=10**5)
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    assert abs(samples.mean() - brownian_mean_occupation(a)) < 4 * se + 2e-3


def test_brownian_refinement_matches_plain_walk():
    # the coarse/fine scheme must agree in law with the undecimated walk
    a = 0.3
    fast = brownian_occupation_samples(a, 3000, seed=1, steps=10**4, block=100)
    plain = brownian_occupation_samples(a, 3000, seed=2, steps=10**4, block=1, guard=1e9)
    assert ks_distance(fast, plain) < 1.63 * math.sqrt(2 / 3000)


def test_ks_distance():
    assert ks_distance([0.1, 0.2], [0.1, 0.2]) == 0.0
    assert ks_distance([0.0, 0.0], [1.0, 1.0]) == 1.0
