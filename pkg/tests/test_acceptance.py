"""End-to-end acceptance checks.

Each test prints a single PASS/FAIL line so the whole gate can be read
off a ``pytest -v -s`` run.  The checks cover the golden reference
asset, closed-form and oracle cross-validation of the solvers, the
structural index properties, and desk-scale benchmark replications.
"""
import os
import time

import numpy as np
import pytest

from conftest import random_asset, random_station
from indexalloc import bench, mdp
from indexalloc.core import (
    IndexTable,
    ProjectSpec,
    SystemSpec,
    greedy_action,
    validate_full_indexability,
)
from indexalloc.golden import (
    REFERENCE_BREAKPOINTS,
    REFERENCE_POLICIES,
    reference_asset,
)
from indexalloc.plates import (
    asset_breakpoints,
    asset_first_passage,
    asset_indices,
    solve_Q_asset,
)
from indexalloc.station import (
    StationModel,
    compute_breakpoints,
    delta_v_profile,
    first_passage_stats,
    initial_breakpoint,
    station_indices,
)
from test_plates import passage_oracle as asset_passage_oracle
from test_station import passage_oracle as station_passage_oracle

JOBS = min(4, os.cpu_count() or 1)


def report(name):
    """Print the acceptance verdict for one criterion."""
    class _Reporter:
        def __enter__(self):
            self.t0 = time.monotonic()
            return self

        def __exit__(self, exc_type, exc, tb):
            verdict = "PASS" if exc_type is None else "FAIL"
            dt = time.monotonic() - self.t0
            print(f"\nACCEPTANCE {name}: {verdict} ({dt:.1f}s)")
            return False

    return _Reporter()


def draw_station_pairs(preset_name, n_pairs, seed):
    cfg = bench.preset(preset_name, count=n_pairs, seed=seed)
    return [models for models, _ in bench.generate_instances(cfg)]


def drawn_stations(n, seed):
    """n example-1 plus n example-2 stations at the published ranges."""
    out = []
    for name, s in (("g7", seed), ("g14", seed + 1)):
        pairs = draw_station_pairs(name, (n + 1) // 2, s)
        flat = [st for pair in pairs for st in pair]
        out.extend(flat[:n])
    return out


def drawn_assets(n, seed, preset_name="plates-flat"):
    cfg = bench.preset(preset_name, count=(n + 1) // 2, seed=seed)
    pairs = [models for models, _ in bench.generate_instances(cfg)]
    return [m for pair in pairs for m in pair][:n]


class TestAcceptance:
    def test_01_reference_asset_golden(self):
        with report("01 reference-asset-golden"):
            t0 = time.monotonic()
            sweep = asset_breakpoints(reference_asset())
            got = np.array(sweep.breakpoints)
            for want, row in zip(REFERENCE_BREAKPOINTS, REFERENCE_POLICIES):
                k = int(np.argmin(np.abs(got - want)))
                assert abs(got[k] - want) < 1e-4
                pol = sweep.policy_at(got[k] * (1 + 1e-7))
                assert np.array_equal(pol.levels, row), (want, pol.levels)
            assert time.monotonic() - t0 < 5.0

    def test_02_initial_breakpoint_consistency(self):
        with report("02 initial-breakpoint-consistency"):
            t0 = time.monotonic()
            for st in drawn_stations(50, seed=210):
                S = st.pool_size
                lam, mu = st.arrival_rate, st.mu
                closed = (mu[S] - lam) * (1.0 / (mu[S] - mu[S - 1]) - S / mu[S])
                j1 = initial_breakpoint(st)
                assert j1 == pytest.approx(closed, rel=1e-12)
                cap = mdp.default_cap(st)
                for side, drop in ((1 + 1e-3, 0), (1 - 1e-3, 1)):
                    sol = mdp.relative_value_iteration(
                        mdp.build_station_q(st, j1 * side, cap))
                    levels = sol.policy_levels(0)
                    want = np.full(cap + 1, S)
                    want[1] = S - drop
                    assert np.array_equal(levels[1:], want[1:]), (side, st)
            assert time.monotonic() - t0 < 120.0

    def test_03_oracle_equivalence(self, rng):
        with report("03 oracle-equivalence"):
            for st in drawn_stations(20, seed=303):
                seq = compute_breakpoints(st, depth=40)
                j1 = seq.breakpoints[0]
                cap = mdp.default_cap(st)
                for h in rng.uniform(0.02, 1.3, size=20) * max(j1, 1e-6):
                    if h <= 0:
                        continue
                    sol = mdp.relative_value_iteration(
                        mdp.build_station_q(st, h, cap))
                    dp = sol.policy_levels(0)
                    mine = seq.policy_at(h).levels
                    full = np.nonzero(mine == st.pool_size)[0]
                    n_h = int(full[0]) if len(full) else len(mine) - 1
                    n_h = min(n_h, cap - 1)
                    assert np.array_equal(dp[1:n_h + 1], mine[1:n_h + 1]), h
            for m in drawn_assets(20, seed=304):
                sweep = asset_breakpoints(m)
                top = sweep.intervals[0][0]
                for h in rng.uniform(0.05, 1.5, size=10) * max(top, 1.0):
                    dp, _, _ = solve_Q_asset(m, h)
                    assert np.array_equal(dp.levels, sweep.policy_at(h).levels)

    def test_04_full_indexability_suite(self):
        with report("04 full-indexability-suite"):
            for st in drawn_stations(200, seed=404):
                seq = compute_breakpoints(st, depth=40)
                fam = {w: [p] for w, p in seq.to_multiplier_family().items()}
                assert validate_full_indexability(fam).passed
                table = station_indices(st, 40, seq)
                assert table.monotone_violations(tol=0.0) == []
                vals = table.values
                for a in range(vals.shape[0]):
                    row = vals[a][np.isfinite(vals[a])]
                    assert np.all(np.diff(row) >= 0.0)
            for m in drawn_assets(200, seed=405):
                sweep = asset_breakpoints(m)
                fam = {}
                for h_lo, h_hi, pol in sweep.intervals:
                    h_rep = 2.0 * h_lo if np.isinf(h_hi) else 0.5 * (h_lo + h_hi)
                    fam[1.0 / h_rep] = [pol]
                assert validate_full_indexability(fam).passed
                assert asset_indices(m, sweep).monotone_violations(tol=0.0) == []

    def test_05_delta_v_monotone_in_multiplier(self):
        with report("05 delta-v-monotone-in-h"):
            for st in drawn_stations(50, seed=505):
                seq = compute_breakpoints(st, depth=30)
                j1 = max(seq.breakpoints[0], 1e-3)
                grid = np.linspace(0.05 * j1, 2.0 * j1, 20)
                prev = None
                for h in grid:
                    dv = delta_v_profile(st, h, seq.policy_at(h))[1:25]
                    if prev is not None:
                        assert np.all(dv - prev >= -1e-9)
                    prev = dv
            for m in drawn_assets(50, seed=506):
                sweep = asset_breakpoints(m)
                top = max(sweep.intervals[0][0], 1.0)
                grid = np.linspace(0.05 * top, 2.0 * top, 20)
                prev = None
                for h in grid:
                    stats = asset_first_passage(m, sweep.policy_at(h))
                    dv = stats.delta_v(h)[1:]
                    if prev is not None:
                        assert np.all(dv - prev >= -1e-9)
                    prev = dv

    def test_06_queueing_benchmark_replication(self):
        with report("06 queueing-benchmark-replication"):
            t0 = time.monotonic()
            cfg = bench.preset("g7", count=50, seed=607)
            rep = bench.run_experiment(cfg, policies=("index", "static"),
                                       jobs=JOBS)
            assert rep.n == 50 and not rep.failures
            med_idx = rep.stats["index"]["MED"]
            max_idx = rep.stats["index"]["MAX"]
            med_static = rep.stats["static"]["MED"]
            print(f"\n  index MED={med_idx:.4f}% MAX={max_idx:.4f}% "
                  f"static MED={med_static:.4f}%")
            assert med_idx <= 0.5
            assert med_static >= 5.0 * med_idx
            assert time.monotonic() - t0 < 2400.0
            # Known shortfall, kept as an honest failure: one draw in
            # this set is near-critical (static loads ~0.99 at both
            # stations), and its percentage excess is limited by the
            # truncation depth, not by the heuristic: it falls 41% ->
            # 10% -> 6.0% -> 5.4% as the worst-station cap grows 60 ->
            # 200 -> 400 -> 600 and is still shrinking at depths where
            # exact solves exhaust memory, so the figure at the default
            # cap ceiling is an upper bound on the true excess.  See
            # notes/decisions.md for the trend analysis.
            assert max_idx <= 1.5

    def test_07_asset_benchmark_flat_returns(self):
        with report("07 asset-benchmark-flat-returns"):
            t0 = time.monotonic()
            cfg = bench.preset("plates-flat", count=100, seed=708)
            rep = bench.run_experiment(cfg,
                                       policies=("index", "static", "myopic"),
                                       jobs=JOBS)
            assert rep.n == 100 and not rep.failures
            med = {p: rep.stats[p]["MED"] for p in ("index", "static", "myopic")}
            print(f"\n  MED index={med['index']:.4f}% "
                  f"static={med['static']:.4f}% myopic={med['myopic']:.4f}%")
            assert med["index"] <= 2.0
            assert 2.0 <= med["static"] <= 12.0
            assert med["index"] < med["static"] < med["myopic"]
            assert time.monotonic() - t0 < 1200.0

    def test_08_asset_benchmark_rescaled_returns(self):
        with report("08 asset-benchmark-rescaled-returns"):
            t0 = time.monotonic()
            cfg = bench.preset("plates-rescaled-d", count=50, seed=809)
            rep = bench.run_experiment(cfg, policies=("index", "static"),
                                       jobs=JOBS)
            assert rep.n == 50 and not rep.failures
            med_idx = rep.stats["index"]["MED"]
            med_static = rep.stats["static"]["MED"]
            print(f"\n  MED index={med_idx:.4f}% static={med_static:.4f}%")
            # Known shortfall, kept as an honest failure: the exact DP
            # optimum coincides with the best fixed dedication on most
            # instances of this family, so the optimized-static median
            # is ~0 rather than the >=10% the published study reports.
            # A forced even split does show the reported gap; see the
            # diagnostic below and notes/decisions.md for the analysis.
            evens = []
            for models, _params in bench.generate_instances(cfg):
                joint = mdp.build_joint(models, cfg.resource)
                opt = mdp.policy_iteration(joint)
                half = cfg.resource // 2
                even = sum(float(mdp.birth_death_stationary(
                    m.up_rates[half], m.down_rates[half]) @ m.returns)
                    for m in models)
                evens.append(100.0 * (opt.gain - even) / opt.gain)
            print(f"  diagnostic: forced even split MED="
                  f"{float(np.median(evens)):.4f}%")
            assert med_idx <= 3.0
            assert time.monotonic() - t0 < 1800.0
            assert med_static >= 10.0

    def test_09_closed_form_cross_checks(self, rng):
        with report("09 closed-form-cross-checks"):
            # M/M/1 mean-queue gain on the truncated joint chain
            st = StationModel(arrival_rate=1.0, mu=np.array([0.0, 2.0]))
            joint = mdp.build_joint([st], 1, caps=[80])
            always_on = np.ones(joint.n_states, dtype=int)
            gamma = mdp.evaluate_policy(joint, always_on)
            assert gamma == pytest.approx(1.0, abs=1e-6)  # rho/(1-rho)

            # best-static closed form against a joint-MDP evaluation
            mu = np.array([0.0, 1.2, 2.0, 2.5])
            pair = [StationModel(arrival_rate=0.7, mu=mu),
                    StationModel(arrival_rate=0.9, mu=mu)]
            alloc, closed = mdp.best_static(pair, 3)
            joint = mdp.build_joint(pair, 3, caps=[60, 60])
            ix = {tuple(a): i for i, a in enumerate(joint.actions.tolist())}[alloc]
            on_joint = mdp.evaluate_policy(
                joint, np.full(joint.n_states, ix, dtype=int))
            assert on_joint == pytest.approx(closed, rel=5e-3)

            # passage recursions against absorbing-chain linear solves
            for _ in range(50):
                st = random_station(rng)
                lv = np.concatenate(
                    [[0], np.minimum(1 + rng.integers(0, 2, size=12).cumsum(),
                                     st.pool_size)])
                stats = first_passage_stats(st, lv, n_hi=12)
                T, G, W = station_passage_oracle(st, lv)
                t = np.diff(np.concatenate([[0.0], T]))[:12]
                g = np.diff(np.concatenate([[0.0], G]))[:12]
                w = np.diff(np.concatenate([[0.0], W]))[:12]
                assert np.allclose(stats.t[1:13], t, atol=1e-9, rtol=1e-9)
                assert np.allclose(stats.g[1:13], g, atol=1e-9, rtol=1e-9)
                assert np.allclose(stats.w[1:13], w, atol=1e-9, rtol=1e-9)
            for _ in range(50):
                m = random_asset(rng)
                lv = rng.integers(0, m.max_level + 1, size=m.top_state + 1)
                stats = asset_first_passage(m, lv)
                T, G, P = asset_passage_oracle(m, lv)
                t = np.diff(np.concatenate([[0.0], T]))
                g = np.diff(np.concatenate([[0.0], G]))
                p = np.diff(np.concatenate([[0.0], P]))
                assert np.allclose(stats.t[1:], t, atol=1e-9, rtol=1e-9)
                assert np.allclose(stats.g[1:], g, atol=1e-9, rtol=1e-9)
                assert np.allclose(stats.p[1:], p, atol=1e-9, rtol=1e-9)

    def test_10_top_index_special_case(self, rng):
        with report("10 top-index-special-case"):
            system = SystemSpec(
                projects=tuple(ProjectSpec(state_count=6, max_level=1)
                               for _ in range(4)),
                resource_rate=2.0,
            )
            for _ in range(1000):
                tables = [IndexTable(rng.uniform(-1.0, 1.0, size=(1, 6)))
                          for _ in range(4)]
                state = tuple(int(x) for x in rng.integers(0, 6, size=4))
                action = greedy_action(tables, state, system)
                w = np.array([tables[k].values[0, state[k]] for k in range(4)])
                chosen = {k for k, a in enumerate(action) if a == 1}
                want = {int(k) for k in np.argsort(-w, kind="stable")[:2]
                        if w[k] > 0}
                assert chosen == want, (w, action)
