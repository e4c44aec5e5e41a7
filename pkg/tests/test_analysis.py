import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ehaoi.analysis import (
    Q_EMPTY,
    RenewalStats,
    first_hitting_index,
    gamma,
    gamma_prime,
    geometric_pmf,
    geometric_second_moment,
    geometric_truncation,
    hitting_time_bound,
    hitting_time_growth_check,
    lower_bound,
    martingale_bound_check,
    renewal_tail_check,
    t2_distribution_check,
    t0_convergence_check,
    thinning_check,
    walk_hitting_time,
    walk_hitting_times,
)
from ehaoi.engine import ExperimentConfig, derive_stream, run_experiment, run_records

# Long-run AoI of BU-ER with the T0 clock restarted every cycle, from an
# independent slot-level renewal-reward simulation (1e5 cycles, batch-means SE).
CYCLE_ORACLE = {
    (0.6, 30.0): (1.45484, 0.00244),
    (0.6, 100.0): (1.34489, 0.00162),
    (1.0, 30.0): (0.68679, 0.00114),
}


@pytest.mark.parametrize("p, expected", [(1.0, 0.5), (0.6, 7 / 6), (0.2, 4.5)])
def test_lower_bound_values(p, expected):
    assert lower_bound(p) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("p", [0.0, -0.5, 1.01])
def test_lower_bound_domain(p):
    with pytest.raises(ValueError):
        lower_bound(p)


@given(st.floats(min_value=1e-6, max_value=1.0), st.floats(min_value=1e-6, max_value=1.0))
def test_lower_bound_decreasing(a, b):
    if a < b:
        assert lower_bound(a) > lower_bound(b)


def test_geometric_pmf_examples():
    assert geometric_pmf(1, 0.6) == pytest.approx(0.6)
    assert geometric_pmf(3, 0.5) == 0.125
    with pytest.raises(ValueError):
        geometric_pmf(0, 0.5)


def test_geometric_second_moment_partial_sum():
    s = geometric_second_moment(0.6, terms=10**4)
    assert s == pytest.approx((2 - 0.6) / 0.6**2, rel=1e-12)
    # halved and weighted by p: the lower bound itself
    assert 0.5 * 0.6 * s == pytest.approx(lower_bound(0.6), rel=1e-12)


@pytest.mark.parametrize("p", [0.05, 0.2, 0.6, 0.99, 1.0])
def test_geometric_pmf_sums_to_one(p):
    j = np.arange(1, geometric_truncation(p) + 1)
    assert math.fsum(geometric_pmf(j, p)) == pytest.approx(1.0, abs=1e-12)


def test_hitting_index_examples():
    assert first_hitting_index([0]) == 1
    assert first_hitting_index([2, 0, 0]) == 3
    assert first_hitting_index([1, 1, 1]) is None


def test_walk_sampler_matches_scalar_replay():
    # same generator draws replayed step by step
    rng = derive_stream(1, 0, "walk")
    k, censored = walk_hitting_time(rng, cap=10**6)
    draws = derive_stream(1, 0, "walk").poisson(1.0, 64)
    if k <= 64:
        assert first_hitting_index(draws) == k
    assert not censored and k >= 1


def test_walk_censoring():
    rng = np.random.default_rng(0)
    ks = [walk_hitting_time(rng, cap=5) for _ in range(200)]
    assert all(1 <= k <= 5 for k, _ in ks)
    assert any(c for _, c in ks)
    assert all(k == 5 for k, c in ks if c)


def test_walk_first_step_law():
    # kappa == 1 iff the first slot brings no energy
    k = walk_hitting_times(np.random.default_rng(5), 20000, cap=10)
    assert np.mean(k == 1) == pytest.approx(math.exp(-1), abs=4 * math.sqrt(0.23 / 20000))


def test_censored_mean_grows_with_cap():
    k = walk_hitting_times(derive_stream(42, 0, "walk"), 4000, cap=10**5)
    lo = np.minimum(k, 10**3).mean()
    hi = k.mean()
    assert hi > 5 * lo
    assert hitting_time_growth_check(k, 10**3, 10**5).passed


def test_gamma_functions():
    a = np.array([0.01, 0.1, 1.0, 5.0])
    assert np.all(gamma(a) > 0)
    assert hitting_time_bound(1.0) == pytest.approx(math.exp(-1) / (1 - math.exp(-1)))
    assert hitting_time_bound(1.0) == pytest.approx(0.582, abs=1e-3)
    assert hitting_time_bound(0.01) == pytest.approx(99.5, abs=0.05)
    assert hitting_time_bound(50.0) < 1e-20
    assert np.allclose(gamma_prime(a), 1 - np.exp(-a))
    with pytest.raises(ValueError):
        hitting_time_bound(0.0)


def test_martingale_bound_check():
    k = walk_hitting_times(derive_stream(42, 1, "walk"), 10**4, cap=10**5)
    rep = martingale_bound_check([1.0, 0.1, 0.01], k, 10**5)
    assert rep.passed and all(rep.values["testable"])
    rep = martingale_bound_check([1e-7], k, 10**5)
    assert rep.passed and rep.values["testable"] == [False]


@pytest.fixture(scope="module")
def t2_samples():
    res = run_experiment(ExperimentConfig(p=0.6, T=5000, paths=30, policy="bu-er", T0=30, t0_clock="cycle"))
    return np.array(res.t2)


def test_t2_law(t2_samples):
    assert t2_samples.size >= 10**4
    rep = t2_distribution_check(t2_samples)
    assert rep.passed, rep.to_text()
    assert rep.values["expected_p_t2_1"] == pytest.approx(0.2642, abs=1e-4)
    assert rep.values["p_t2_1"] == pytest.approx(1 - Q_EMPTY, abs=3 * math.sqrt(0.2642 * 0.7358 / t2_samples.size))
    assert np.mean(t2_samples == 2) == pytest.approx(Q_EMPTY * (1 - Q_EMPTY), abs=0.015)
    assert rep.values["expected_mean"] == pytest.approx(3.7844, abs=1e-4)


def test_t2_check_rejects_wrong_law():
    rng = np.random.default_rng(0)
    wrong = rng.geometric(1 - math.exp(-1), 20000)
    assert not t2_distribution_check(wrong).passed


def test_renewal_tail_check():
    tails = {}
    for t0 in (10.0, 30.0, 100.0, 300.0):
        res = run_experiment(ExperimentConfig(p=0.6, T=5000, paths=20, policy="bu-er", T0=t0, t0_clock="cycle"))
        tails[t0] = res.tail
    rep = renewal_tail_check(tails)
    assert rep.passed, rep.to_text()


def test_renewal_tail_perfect_channel():
    res = run_experiment(ExperimentConfig(p=1.0, T=2000, paths=10, policy="bu-er", T0=30, t0_clock="cycle"))
    assert np.mean(res.tail) < 1


def test_renewal_stats_pooling():
    recs = run_records(ExperimentConfig(p=0.6, T=1000, paths=4, policy="bu-er", T0=10, t0_clock="cycle"))
    rs = RenewalStats.from_records(recs)
    assert rs.t1.size == sum(len(r.t1) for r in recs)
    assert np.all(rs.t2 >= 1) and np.all(rs.t2 == np.round(rs.t2))
    assert np.all(rs.tail <= rs.t1 + 30)


def test_thinning_law_without_outages():
    p = 0.6
    cfg = ExperimentConfig(p=p, T=5000, paths=34, E0=10**4)
    x = np.concatenate([np.diff((0.0,) + r.deliveries.epochs) for r in run_records(cfg, keep_records=True)])
    assert x.size >= 10**5
    rep = thinning_check(x[: 10**5], p)
    assert rep.passed, rep.to_text()
    assert x.mean() == pytest.approx(1 / p, rel=0.01)


@pytest.mark.parametrize("p, t0", sorted(CYCLE_ORACLE))
def test_cycle_clock_matches_renewal_oracle(p, t0):
    res = run_experiment(ExperimentConfig(p=p, T=5000, paths=100, policy="bu-er", T0=t0, t0_clock="cycle"))
    want, se = CYCLE_ORACLE[(p, t0)]
    assert abs(res.mean_aoi - want) < 3 * math.hypot(se, res.stderr_aoi) + 0.005


def test_t0_convergence_trend_with_cycle_clock():
    rep = t0_convergence_check(0.6, (5.0, 30.0, 100.0), T=5000, paths=60)
    assert rep.passed, rep.to_text()
    m = rep.values["mean"]
    assert m[2] < m[0]
    assert rep.values["bu_mean"] <= min(m)


def test_t0_convergence_examples_with_absolute_clock():
    rep = t0_convergence_check(0.6, (100.0,), T=5000, paths=60, t0_clock="absolute", tolerance=0.10)
    assert rep.passed, rep.to_text()
    rep = t0_convergence_check(1.0, (30.0,), T=5000, paths=60, t0_clock="absolute", tolerance=0.10)
    assert rep.passed, rep.to_text()
