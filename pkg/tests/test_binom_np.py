import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from gfi.binom_np import (
    NpSamplerConfig,
    NpSolutionSet,
    NpState,
    build_grid,
    gibbs_scan,
    init_state,
    log_accept_ratio,
    mh_step_mu,
    mh_step_n,
    p_bounds,
    run_np_sampler,
    solution_set,
)
from gfi.numerics import DomainError, binom_cdf, gamma_quantile


def _inverse_cdf(n, p, u):
    """Smallest k with u <= F_{n,p}(k), by direct search."""
    k = 0
    while binom_cdf(n, p, k) < u:
        k += 1
    return k


def _check_set(s, y):
    e = s.entries
    assert e.shape[0] > 0
    assert np.all(np.diff(e[:, 0]) > 0)
    assert np.all(e[:, 1] < e[:, 2])
    assert e[0, 0] >= max(y.max(), 1)


# ---------------------------------------------------------------------------
# p bounds


def test_p_bound_marginals_are_beta():
    rng = np.random.default_rng(0)
    y, n = 3, 11
    u = rng.random(4000)
    b = np.array([p_bounds(y, n, ui) for ui in u])
    assert stats.kstest(b[:, 0], stats.beta(y, n - y + 1).cdf).pvalue > 0.01
    assert stats.kstest(b[:, 1], stats.beta(y + 1, n - y).cdf).pvalue > 0.01


def test_p_bound_degenerate_conventions():
    for n in (1, 5, 40):
        assert p_bounds(0, n, 0.3)[0] == 0.0
        assert p_bounds(n, n, 0.3)[1] == 1.0
    with pytest.raises(DomainError):
        p_bounds(5, 4, 0.5)
    with pytest.raises(DomainError):
        p_bounds(1, 4, 1.0)


@given(st.integers(0, 12), st.integers(0, 20), st.floats(0.01, 0.99))
def test_p_bounds_invert_the_cdf(y, extra, u):
    n = max(y, 1) + extra
    y = min(y, n)
    lo, hi = p_bounds(y, n, u)
    assert 0.0 <= lo < hi <= 1.0
    for p in np.linspace(0.001, 0.999, 200):
        if min(abs(p - lo), abs(p - hi)) < 1e-9:
            continue
        inside = lo < p <= hi
        assert inside == (binom_cdf(n, p, y - 1) < u <= binom_cdf(n, p, y))


# ---------------------------------------------------------------------------
# solution sets


def test_single_observation_set_runs_to_gamma_limit():
    for y, u in ((3, 0.4), (0, 0.7), (7, 0.05)):
        s = solution_set(np.array([u]), np.array([y]))
        _check_set(s, np.array([y]))
        assert s.unbounded_tail
        assert s.n_min == max(y, 1)
        n_last, lo_last, hi_last = s.entries[-1]
        assert abs(hi_last - gamma_quantile(y + 1, 1.0, 1.0 - u)) < 1e-3
        if y > 0:
            assert abs(lo_last - gamma_quantile(y, 1.0, 1.0 - u)) < 1e-3


def test_forward_replay_reproduces_data():
    rng = np.random.default_rng(5)
    y = rng.binomial(20, 0.4, 12)
    cfg = NpSamplerConfig()
    found = 0
    for _ in range(40):
        u = rng.random(y.size)
        s = solution_set(u, y, cfg)
        if s.empty:
            continue
        found += 1
        _check_set(s, y)
        for row in s.entries[rng.choice(len(s), size=min(3, len(s)), replace=False)]:
            n, lo, hi = row
            for mu in (lo + 0.5 * (hi - lo), hi):
                assert [_inverse_cdf(int(n), mu / n, ui) for ui in u] == y.tolist()
    # the midpoint start always has a nonempty set
    st_ = init_state(y, cfg)
    s = solution_set(st_.u, y, cfg)
    assert not s.empty
    assert found + 1 > 0


def test_empty_set_is_a_value():
    y = np.array([0, 30])
    s = solution_set(np.array([0.999, 0.999]), y, NpSamplerConfig(n_cap=200))
    assert isinstance(s, NpSolutionSet)
    assert s.empty or s.entries[0, 0] >= 30


def test_solution_set_membership():
    y = np.array([4])
    s = solution_set(np.array([0.5]), y)
    n, lo, hi = s.entries[2]
    assert s.contains(n, 0.5 * (lo + hi))
    assert not s.contains(n, hi + 1e-6)
    assert not s.contains(3, 1.0)


def test_grid_dense_then_geometric():
    g = build_grid(10)
    assert g[0] == 10 and np.all(np.diff(g[:101]) == 1)
    assert g[-1] == 1_000_000 and np.all(np.diff(g) >= 1)
    ratio = g[-50:-1][1:] / g[-50:-1][:-1]
    assert np.all(ratio < 1.06)


# ---------------------------------------------------------------------------
# Gamma limit


@pytest.mark.parametrize("y", [0, 1, 3, 10, 25])
@pytest.mark.parametrize("u", [0.05, 0.3, 0.7, 0.95])
def test_gamma_limit_convergence(y, u):
    target = gamma_quantile(y + 1, 1.0, 1.0 - u)
    start = max(10 * y, 10)
    ns = np.unique(np.geomspace(start, 1e6, 25).astype(int))
    gaps = np.array([abs(n * p_bounds(y, int(n), u)[1] - target) for n in ns])
    assert gaps[-1] < 1e-3
    assert np.all(np.diff(gaps) <= 1e-12)


# ---------------------------------------------------------------------------
# initialization


def test_init_fallback_for_constant_data():
    s = init_state(np.array([4, 4, 4, 4]), NpSamplerConfig())
    run = s.first_run()
    assert run is not None
    # midpoint construction at n = 2 * 4 must be admissible
    k = int(np.searchsorted(s.grid, 8))
    assert run[0] <= k <= run[1]
    lo, hi = s.LO[:, k].max(), s.UP[:, k].min()
    assert lo < 4.0 <= hi


def test_init_start_in_clamp_range():
    y = np.random.default_rng(3).binomial(15, 0.1, 50)
    cfg = NpSamplerConfig()
    s = init_state(y, cfg)
    run = s.first_run()
    assert run is not None
    assert y.max() <= s.grid[run[0]] <= 10 * y.max()
    with pytest.raises(DomainError):
        init_state(np.zeros(5, dtype=int), cfg)


# ---------------------------------------------------------------------------
# Gibbs scan and Metropolis moves


def test_single_observation_gibbs_is_free():
    y = np.array([3])
    state = init_state(y, NpSamplerConfig())
    rng = np.random.default_rng(0)
    us = []
    for _ in range(3000):
        gibbs_scan(state, NpSamplerConfig(), rng)
        us.append(state.u[0])
    assert stats.kstest(us, "uniform").pvalue > 0.01


def test_feasibility_over_many_scans():
    y = np.random.default_rng(7).binomial(15, 0.5, 30)
    cfg = NpSamplerConfig()
    state = init_state(y, cfg)
    rng = np.random.default_rng(1)
    for _ in range(1000):
        gibbs_scan(state, cfg, rng)
        mh_step_mu(state, cfg, rng)
        mh_step_n(state, cfg, rng)
        run = state.first_run()
        assert run is not None
        assert state.grid[run[0]] >= y.max()


def test_accept_ratio_is_reciprocal():
    rng = np.random.default_rng(2)
    vals = np.array([2, 5, 7])
    counts = np.array([3, 1, 2])
    for _ in range(50):
        n1, n2 = rng.integers(7, 40, 2)
        m1, m2 = rng.uniform(1, 7, 2)
        w1, w2 = rng.uniform(0.01, 2, 2)
        ab = log_accept_ratio(w1, w2, n1, m1, n2, m2, vals, counts)
        ba = log_accept_ratio(w2, w1, n2, m2, n1, m1, vals, counts)
        assert ab + ba == pytest.approx(0.0, abs=1e-9)
    assert log_accept_ratio(0.3, 0.3, 20, 4.0, 20, 4.0, vals, counts) == 0.0


def test_tiny_proposal_is_almost_always_accepted():
    y = np.random.default_rng(4).binomial(10, 0.5, 3)
    cfg = NpSamplerConfig(mu_proposal_sd=1e-9)
    state = init_state(y, cfg)
    rng = np.random.default_rng(3)
    acc = 0
    for _ in range(200):
        k0 = state.first_run()[0]
        lo, hi = state.interval_at(k0)
        acc += mh_step_mu(state, cfg, rng)
    # the proposed U is redrawn inside the box, so only the feasibility of the redraw can fail
    assert acc > 0


def test_metropolis_moves_keep_states_feasible():
    y = np.random.default_rng(6).binomial(15, 0.9, 20)
    cfg = NpSamplerConfig()
    state = init_state(y, cfg)
    rng = np.random.default_rng(4)
    for _ in range(300):
        mh_step_n(state, cfg, rng)
        mh_step_mu(state, cfg, rng)
        run = state.first_run()
        assert run is not None and state.grid[run[0]] >= y.max()


def _chain_stats(y, u0, iters, seed):
    """Per-iteration (mu midpoint at the smallest n, largest feasible n) after a 10% burn-in."""
    cfg = NpSamplerConfig()
    grid = build_grid(max(int(y.max()), 1))
    state = NpState(y, u0, grid)
    assert state.first_run() is not None
    rng = np.random.default_rng(seed)
    out = []
    for t in range(iters):
        gibbs_scan(state, cfg, rng)
        mh_step_mu(state, cfg, rng)
        mh_step_n(state, cfg, rng)
        k0, k1 = state.first_run()
        lo, hi = state.interval_at(k0)
        out.append((0.5 * (lo + hi), grid[k1]))
    return np.array(out[iters // 10:])


def _batch_se(x, batches=40):
    size = x.size // batches
    means = [np.mean(x[i * size:(i + 1) * size]) for i in range(batches)]
    return np.std(means) / math.sqrt(batches)


def test_two_starts_agree():
    y = np.array([2, 3])
    a = _chain_stats(y, init_state(y, NpSamplerConfig()).u, 4000, 0)
    # second start: CDF-step midpoints at a much larger n
    n_far, p_far = 40, 2.5 / 40
    u = np.array([0.5 * (binom_cdf(n_far, p_far, v - 1) + binom_cdf(n_far, p_far, v)) for v in y])
    b = _chain_stats(y, u, 4000, 1)
    stats_ = [lambda c: c[:, 0]] + [lambda c, k=k: (c[:, 1] <= k).astype(float) for k in (5, 10, 50)]
    for f in stats_:
        xa, xb = f(a), f(b)
        se = math.hypot(_batch_se(xa), _batch_se(xb))
        assert abs(xa.mean() - xb.mean()) < max(4 * se, 0.03)


# ---------------------------------------------------------------------------
# full runs


def test_run_reproducible():
    y = np.random.default_rng(8).binomial(15, 0.5, 20)
    cfg = NpSamplerConfig(iterations=60, burn_in=10, seed=3)
    a = run_np_sampler(y, cfg)
    b = run_np_sampler(y, cfg)
    assert np.array_equal(a.records(), b.records())
    assert len(a.sets) == 50
    assert a.records().shape[1] == 5


def test_poisson_regime_has_unbounded_tails_and_brackets_mu():
    y = np.random.default_rng(3).binomial(15, 0.1, 50)
    run = run_np_sampler(y, NpSamplerConfig(iterations=300, burn_in=50, seed=1))
    for s in run.sets:
        _check_set(s, y)
    assert np.mean([s.unbounded_tail for s in run.sets]) > 0.01
    rng = np.random.default_rng(0)
    mu_rep = [s.entries[:, 1].min() if rng.random() < 0.5 else s.entries[:, 2].max() for s in run.sets]
    lo, hi = np.quantile(mu_rep, [0.025, 0.975])
    assert lo < 1.5 < hi


def test_high_p_regime_is_narrow():
    y = np.random.default_rng(3).binomial(15, 0.9, 50)
    run = run_np_sampler(y, NpSamplerConfig(iterations=200, burn_in=50, seed=1))
    assert not any(s.unbounded_tail for s in run.sets)
    nmin = np.array([s.n_min for s in run.sets])
    assert np.all((nmin >= 15) & (nmin <= 20))


def test_config_errors():
    with pytest.raises(DomainError):
        NpSamplerConfig(eps2=0)
    with pytest.raises(DomainError):
        NpSamplerConfig(iterations=10, burn_in=10)
    with pytest.raises(DomainError):
        NpSamplerConfig(mu_proposal_sd=-1.0)
