"""Station passage recursions, breakpoint sweep and index recovery.

Oracles: absorbing-chain linear solves for the passage quantities,
renewal closed forms for policy gains, and DP (policy iteration /
relative value iteration) on a truncated chain for optimal policies.
"""
import numpy as np
import pytest

from conftest import random_monotone_policy, random_station
from indexalloc import mdp
from indexalloc.core import index_from_policy_family, validate_full_indexability
from indexalloc.station import (
    StationModel,
    check_assumption1,
    compute_breakpoints,
    delta_v_profile,
    first_passage_stats,
    initial_breakpoint,
    policy_gain,
    station_indices,
)


def passage_oracle(station, levels, cap=400):
    """T, G, W to absorption at 0 via a dense linear solve.

    The chain is truncated at ``cap`` with arrivals there dropped;
    with the stable policies used in tests the truncation error is
    far below the comparison tolerance.
    """
    lam = station.arrival_rate
    S = station.pool_size
    lv = np.full(cap + 1, S, dtype=int)
    lv[:min(len(levels), cap + 1)] = levels[:cap + 1]
    M = np.zeros((cap, cap))  # unknowns T(1)..T(cap)
    rhs_t = np.ones(cap)
    rhs_g = np.arange(1, cap + 1, dtype=float)
    rhs_w = np.array([lv[n] for n in range(1, cap + 1)], dtype=float)
    for i, n in enumerate(range(1, cap + 1)):
        mu_n = station.mu[lv[n]]
        out = mu_n + (lam if n < cap else 0.0)
        M[i, i] = out
        if n < cap:
            M[i, i + 1] = -lam
        if n > 1:
            M[i, i - 1] = -mu_n
    T = np.linalg.solve(M, rhs_t)
    G = np.linalg.solve(M, rhs_g)
    W = np.linalg.solve(M, rhs_w)
    return T, G, W


class TestAssumptionChecks:
    def test_min_levels_and_joint_stability(self):
        a = np.arange(6, dtype=float)
        mu = 2 * a / (a + 1)
        stations = [StationModel(arrival_rate=1.0, mu=mu) for _ in range(2)]
        report = check_assumption1(stations, 5)
        # mu(1) = 1 is not > 1, so the minimum stabilizing level is 2
        assert report.min_levels == [2, 2]
        assert report.passed

    def test_linear_mu_fails_strict_concavity(self):
        st = StationModel(arrival_rate=1.0, mu=np.arange(4, dtype=float) * 2)
        report = check_assumption1([st], 3)
        assert any("concave" in f for f in report.failures)

    def test_bounded_mu_fails_stability(self):
        a = np.arange(6, dtype=float)
        st = StationModel(arrival_rate=3.0, mu=2 * a / (a + 1))
        report = check_assumption1([st], 5)
        assert not report.passed
        assert any("lambda" in f for f in report.failures)


class TestFirstPassage:
    def test_full_pool_constant_passage_time(self):
        st = StationModel(arrival_rate=1.0, mu=np.array([0.0, 1.5, 2.0]))
        stats = first_passage_stats(st, np.array([0, 2, 2, 2, 2]))
        assert np.allclose(stats.t[1:], 1.0)  # 1/(mu - lam) = 1

    def test_integrated_head_count_closed_form(self):
        # area under the excursion from 1 to 0: mu/(mu-lam)^2 = 2
        st = StationModel(arrival_rate=1.0, mu=np.array([0.0, 1.5, 2.0]))
        stats = first_passage_stats(st, np.array([0, 2, 2, 2]))
        assert stats.g[1] == pytest.approx(2.0, abs=1e-12)

    def test_two_level_policy_hand_recursion(self):
        st = StationModel(arrival_rate=1.0, mu=np.array([0.0, 1.8, 2.5]))
        stats = first_passage_stats(st, np.array([0, 1, 2, 2]))
        tail = 1.0 / (2.5 - 1.0)
        assert stats.t[1] == pytest.approx((1 + 1.0 * tail) / 1.8, rel=1e-14)

    def test_oracle_agreement_random_pairs(self, rng):
        for _ in range(30):
            st = random_station(rng)
            levels = random_monotone_policy(rng, 12, st.pool_size)
            levels = np.concatenate([[0], levels[1:]])
            stats = first_passage_stats(st, levels, n_hi=30)
            T, G, W = passage_oracle(st, levels)
            t = np.diff(np.concatenate([[0.0], T]))
            g = np.diff(np.concatenate([[0.0], G]))
            w = np.diff(np.concatenate([[0.0], W]))
            assert np.allclose(stats.t[1:31], t[:30], atol=1e-9, rtol=1e-9)
            assert np.allclose(stats.g[1:31], g[:30], atol=1e-9, rtol=1e-9)
            assert np.allclose(stats.w[1:31], w[:30], atol=1e-9, rtol=1e-9)

    def test_uniform_lower_bound_and_alpha(self, rng):
        st = random_station(rng)
        levels = random_monotone_policy(rng, 10, st.pool_size)
        stats = first_passage_stats(st, levels, n_hi=20)
        gap = st.mu[-1] - st.arrival_rate
        assert np.all(stats.t[1:] >= 1.0 / gap - 1e-12)
        assert 0.0 < stats.alpha < 1.0

    def test_unstable_pool_rejected(self):
        st = StationModel(arrival_rate=3.0, mu=np.array([0.0, 1.0, 2.0]))
        with pytest.raises(ValueError, match="stable"):
            first_passage_stats(st, np.array([0, 2, 2]))


class TestInitialBreakpoint:
    def test_closed_form_example(self):
        st = StationModel(arrival_rate=1.0, mu=np.array([0.0, 2.0, 3.0]))
        assert initial_breakpoint(st) == pytest.approx(2.0 / 3.0, abs=1e-14)

    def test_linear_through_origin_boundary_gives_zero(self):
        # mu(S) - mu(S-1) = mu(S)/S makes the two terms cancel
        st = StationModel(arrival_rate=1.0, mu=np.array([0.0, 1.5, 3.0]))
        assert initial_breakpoint(st) == pytest.approx(0.0, abs=1e-14)

    def test_equal_gain_at_the_breakpoint(self, rng):
        # at h = j1 the full-pool policy and its one-step reduction tie
        for _ in range(10):
            st = random_station(rng)
            j1 = initial_breakpoint(st)
            if j1 <= 0:
                continue
            S = st.pool_size
            u0 = np.concatenate([[0], np.full(10, S)])
            u1 = u0.copy()
            u1[1] = S - 1
            g0 = policy_gain(st, j1, u0)
            g1 = policy_gain(st, j1, u1)
            assert g0 == pytest.approx(g1, rel=1e-10)


class TestBreakpointSweep:
    def test_single_switch_structure(self, rng):
        st = random_station(rng)
        seq = compute_breakpoints(st, depth=30)
        assert np.all(np.diff(seq.breakpoints) < 0)
        for a, b in zip(seq.policies, seq.policies[1:]):
            diff = a - b
            assert diff.sum() == 1 and np.count_nonzero(diff) == 1
        for pol in seq.policies:
            assert np.all(np.diff(pol[1:]) >= 0)  # monotone in head count

    def test_first_switch_at_head_count_one(self, rng):
        st = random_station(rng)
        seq = compute_breakpoints(st, depth=20)
        assert seq.switch_states[0] == 1
        # N_1 = 2: the second policy reaches the full pool at n = 2
        assert seq.policies[1][1] == st.pool_size - 1
        assert seq.policies[1][2] == st.pool_size

    def test_initial_breakpoint_matches_sweep(self, rng):
        for _ in range(10):
            st = random_station(rng)
            seq = compute_breakpoints(st, depth=20)
            assert seq.breakpoints[0] == pytest.approx(initial_breakpoint(st),
                                                       rel=1e-10)

    def test_policy_at_matches_dp(self, rng):
        st = StationModel(arrival_rate=1.0,
                          mu=np.arange(8, dtype=float) / (np.arange(8) + 6.0) * 2.5)
        seq = compute_breakpoints(st, depth=60)
        for h in (0.05, 0.2, 1.0, 5.0):
            sol = mdp.policy_iteration(mdp.build_station_q(st, h, 500))
            dp = sol.policy_levels(0)
            mine = seq.policy_at(h).levels
            n_hi = int(np.nonzero(mine == st.pool_size)[0][0]) + 5
            assert np.array_equal(dp[1:n_hi], mine[1:n_hi])

    def test_gain_matches_dp(self, rng):
        st = random_station(rng, pool=8)
        seq = compute_breakpoints(st, depth=60)
        for h in (0.3, 1.0, 3.0):
            cap = max(mdp.default_cap(st), 200)
            sol = mdp.policy_iteration(mdp.build_station_q(st, h, cap))
            mine = policy_gain(st, h, seq.policy_at(h).levels)
            assert mine == pytest.approx(sol.gain, rel=1e-6)


class TestStationIndices:
    def station223(self):
        return StationModel(arrival_rate=1.0, mu=np.array([0.0, 2.0, 3.0]))

    def test_small_station_index_value(self):
        table = station_indices(self.station223(), 5)
        # level drops from 2 to 1 at head count 1 at j1 = 2/3
        assert table.lookup(1, 1) == pytest.approx(1.5, rel=1e-12)

    def test_scale_equivariance_in_holding_cost(self):
        st = self.station223()
        st2 = StationModel(arrival_rate=1.0, mu=np.array([0.0, 2.0, 3.0]),
                           holding_cost=2.0)
        t1 = station_indices(st, 8)
        t2 = station_indices(st2, 8)
        finite = np.isfinite(t1.values)
        assert np.allclose(t2.values[finite], 2.0 * t1.values[finite])

    def test_monotone_in_level_and_state(self, rng):
        for _ in range(10):
            st = random_station(rng)
            table = station_indices(st, 20)
            assert table.monotone_violations(tol=1e-9) == []
            vals = table.values
            for a in range(vals.shape[0]):
                row = vals[a][np.isfinite(vals[a])]
                assert np.all(np.diff(row) >= -1e-9)  # nondecreasing in n

    def test_empty_queue_has_zero_index(self, rng):
        st = random_station(rng)
        table = station_indices(st, 10)
        assert np.all(table.values[:, 0] == 0.0)

    def test_family_round_trip(self, rng):
        st = random_station(rng, pool=6)
        seq = compute_breakpoints(st, depth=15)
        fam = seq.to_multiplier_family()
        report = validate_full_indexability({w: [p] for w, p in fam.items()})
        assert report.passed
        table = index_from_policy_family(fam, exact=True)
        direct = station_indices(st, 15, seq)
        n = min(table.state_count, direct.state_count)
        for a in range(min(table.max_level, direct.max_level)):
            got = table.values[a, :n]
            want = direct.values[a, :n]
            both = np.isfinite(got) & np.isfinite(want)
            assert np.allclose(got[both], want[both], rtol=1e-12)
            assert np.array_equal(np.isfinite(got), np.isfinite(want))


class TestDeltaV:
    def test_delta_v_at_one_is_gain_over_lambda(self, rng):
        st = random_station(rng)
        seq = compute_breakpoints(st, depth=25)
        for h in (0.4, 1.3):
            u = seq.policy_at(h)
            dv = delta_v_profile(st, h, u)
            gamma = policy_gain(st, h, u)
            assert dv[1] == pytest.approx(gamma / st.arrival_rate, rel=1e-10)

    def test_lower_bound_inequality(self, rng):
        st = random_station(rng)
        seq = compute_breakpoints(st, depth=25)
        h = 0.8
        u = seq.policy_at(h)
        dv = delta_v_profile(st, h, u)
        gamma = policy_gain(st, h, u)
        stats = first_passage_stats(st, u.levels, n_hi=len(dv) - 1)
        n = np.arange(1, len(dv))
        assert np.all(dv[1:] >= stats.t[1:len(dv)] * (h * n - gamma) - 1e-9)

    def test_two_sided_optimality_certificate(self, rng):
        # strictly inside an interval the last server pays for itself
        # and the next one does not (with mu(S+1) read as mu(S))
        st = random_station(rng)
        seq = compute_breakpoints(st, depth=25)
        js = seq.breakpoints[seq.breakpoints > 0]
        if len(js) < 3:
            pytest.skip("too few breakpoints")
        h = np.sqrt(js[0] * js[1])  # inside the second interval
        u = seq.policy_at(h)
        dv = delta_v_profile(st, h, u)
        mu = st.mu
        S = st.pool_size
        for n in range(1, 20):
            a = u[n]
            if a > 0:
                assert dv[n] * (mu[a] - mu[a - 1]) >= 1 - 1e-9
            up = mu[min(a + 1, S)] - mu[a]
            assert dv[n] * up <= 1 + 1e-9

    def test_increasing_in_h_on_fixed_policy(self, rng):
        st = random_station(rng)
        seq = compute_breakpoints(st, depth=25)
        u = seq.policy_at(0.7)
        lo = delta_v_profile(st, 0.7, u)
        hi = delta_v_profile(st, 0.7 + 1e-3, u)
        assert np.all(hi[1:] >= lo[1:] - 1e-12)
