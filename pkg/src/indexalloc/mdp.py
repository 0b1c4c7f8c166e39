"""Uniformized average-criterion DP over one or more projects.

Builds finite Markov decision processes for the joint resource
allocation problems (hard budget) and for the single-project charged
problems, and solves them by relative value iteration or Howard
policy iteration with exact sparse gain/bias solves.  Used both as
the comparison standard in the benchmark and as the oracle for the
index modules.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .plates import AssetModel
from .station import StationModel

__all__ = [
    "TruncatedJointMdp",
    "GainBiasSolution",
    "build_joint",
    "build_station_q",
    "build_asset_q",
    "default_cap",
    "relative_value_iteration",
    "policy_iteration",
    "evaluate_policy",
    "best_static",
    "percentage_excess",
    "birth_death_stationary",
]

SPAN_TOL = 1e-8
TIE_TOL = 1e-9
DIRECT_SOLVE_LIMIT = 400_000
MEMORY_BUDGET_BYTES = 4 << 30


class TruncatedJointMdp:
    """Product-space MDP with per-project birth-death rate components.

    ``up[k][a, n]`` / ``down[k][a, n]`` are the upward/downward rates
    of project ``k`` at level ``a`` in local state ``n`` (boundary
    indicators already applied).  Stage cost rate is
    ``state_cost(x) + sum_k action_cost[k][a_k, n_k]``.  ``sense`` is
    +1 to minimize, -1 to maximize.  Uniformization completes every
    row with a self-loop at total event rate ``unif``.
    """

    def __init__(self, shape, actions, up, down, state_cost, action_cost,
                 sense, unif):
        self.shape = tuple(shape)
        self.K = len(self.shape)
        self.n_states = int(np.prod(self.shape))
        self.actions = np.asarray(actions, dtype=int)
        self.n_actions = len(self.actions)
        self.up = [np.asarray(u, dtype=float) for u in up]
        self.down = [np.asarray(d, dtype=float) for d in down]
        self.state_cost = np.asarray(state_cost, dtype=float).reshape(self.shape)
        self.action_cost = [np.asarray(c, dtype=float) for c in action_cost]
        self.sense = sense
        self.unif = float(unif)
        if self.n_actions == 0:
            raise ValueError("empty action set")
        est = self.n_states * (2 * self.K + 2) * 8 * 4
        if est > MEMORY_BUDGET_BYTES:
            raise MemoryError(f"state space needs ~{est / 1e9:.1f} GB")
        # local-state index grids, one per project, broadcast over the grid
        self._ngrid = np.indices(self.shape)
        rate_max = 0.0
        for k in range(self.K):
            # tight per-state bound: maximize over actions within a state
            # before taking the worst state, then sum over projects
            rate_max += float(np.max(self.up[k].max(axis=0)
                                     + self.down[k].max(axis=0)))
        if rate_max > self.unif * (1 + 1e-12):
            raise ValueError("uniformization constant below maximal exit rate")

    # -- Bellman machinery -------------------------------------------------

    def _shifted_diffs(self, v):
        """(V(x+e_k) - V(x), V(x-e_k) - V(x)) per project, zero at edges."""
        ups, downs = [], []
        for k in range(self.K):
            vu = np.zeros_like(v)
            vd = np.zeros_like(v)
            sl_hi = [slice(None)] * self.K
            sl_lo = [slice(None)] * self.K
            sl_hi[k] = slice(0, self.shape[k] - 1)
            sl_lo[k] = slice(1, self.shape[k])
            vu[tuple(sl_hi)] = v[tuple(sl_lo)] - v[tuple(sl_hi)]
            vd[tuple(sl_lo)] = v[tuple(sl_hi)] - v[tuple(sl_lo)]
            ups.append(vu)
            downs.append(vd)
        return ups, downs

    def _action_score(self, i, vu, vd):
        """Rate-weighted drift plus action cost of action ``i`` (grid array)."""
        a = self.actions[i]
        score = 0.0
        for k in range(self.K):
            n_k = self._ngrid[k]
            shp = [1] * self.K
            shp[k] = self.shape[k]
            up_row = self.up[k][a[k]].reshape(shp)
            dn_row = self.down[k][a[k]].reshape(shp)
            ac_row = self.action_cost[k][a[k]].reshape(shp)
            score = score + up_row * vu[k] + dn_row * vd[k] + self.sense * ac_row
        return score

    def bellman(self, v):
        """One uniformized sweep; returns (new value grid, best scores).

        Internally works in minimization form on ``sense * cost``.
        """
        vu, vd = self._shifted_diffs(v)
        if self.K == 1:
            # fully vectorized across the action axis
            scores = (self.up[0] * vu[0][None, :] + self.down[0] * vd[0][None, :]
                      + self.sense * self.action_cost[0])
            best = scores.min(0) if self.sense > 0 else scores.max(0)
        else:
            best = None
            for i in range(self.n_actions):
                s = self._action_score(i, vu, vd)
                if best is None:
                    best = s
                elif self.sense > 0:
                    np.minimum(best, s, out=best)
                else:
                    np.maximum(best, s, out=best)
        return v + (self.state_cost + best) / self.unif, best

    def greedy_policy(self, v, tie_tol=TIE_TOL):
        """Per-state optimal action indices; maximal action among ties.

        Actions are enumerated in ascending lexicographic order, so
        scanning from the last action down picks the largest level
        vector among those within ``tie_tol`` of the optimum.
        """
        vu, vd = self._shifted_diffs(v)
        if self.K == 1:
            scores = (self.up[0] * vu[0][None, :]
                      + self.down[0] * vd[0][None, :]
                      + self.sense * self.action_cost[0])
            eff = scores if self.sense > 0 else -scores
            best = eff.min(0)
            ok = eff <= best[None, :] + tie_tol * (1 + np.abs(best[None, :]))
            # last (largest) admissible action per state
            policy = eff.shape[0] - 1 - np.argmax(ok[::-1], axis=0)
            return policy.astype(int)
        best = np.full(self.shape, np.inf)
        for i in range(self.n_actions):
            s = self._action_score(i, vu, vd)
            eff = s if self.sense > 0 else -s
            np.minimum(best, eff, out=best)
        policy = np.zeros(self.shape, dtype=int)
        chosen = np.zeros(self.shape, dtype=bool)
        for i in range(self.n_actions - 1, -1, -1):
            s = self._action_score(i, vu, vd)
            eff = s if self.sense > 0 else -s
            hit = (~chosen) & (eff <= best + tie_tol * (1 + np.abs(best)))
            policy[hit] = i
            chosen |= hit
        return policy.reshape(-1)

    def policy_matrix(self, policy):
        """Sparse uniformized transition matrix of a fixed policy."""
        pol = np.asarray(policy).reshape(-1)
        idx = np.arange(self.n_states)
        coords = np.unravel_index(idx, self.shape)
        strides = np.array([int(np.prod(self.shape[k + 1:])) for k in range(self.K)])
        rows, cols, vals = [idx], [idx], [np.zeros(self.n_states)]
        exit_rate = np.zeros(self.n_states)
        a = self.actions[pol]
        for k in range(self.K):
            n_k = coords[k]
            up_r = self.up[k][a[:, k], n_k]
            dn_r = self.down[k][a[:, k], n_k]
            can_up = n_k < self.shape[k] - 1
            can_dn = n_k > 0
            rows.append(idx[can_up])
            cols.append(idx[can_up] + strides[k])
            vals.append(up_r[can_up] / self.unif)
            rows.append(idx[can_dn])
            cols.append(idx[can_dn] - strides[k])
            vals.append(dn_r[can_dn] / self.unif)
            exit_rate += np.where(can_up, up_r, 0) + np.where(can_dn, dn_r, 0)
        vals[0] = 1.0 - exit_rate / self.unif
        P = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_states, self.n_states),
        )
        return P

    def policy_cost(self, policy):
        """Stage cost (or reward) rate vector under a fixed policy.

        Action costs always oppose the objective: they add to cost in
        minimization and subtract from reward in maximization.
        """
        pol = np.asarray(policy).reshape(-1)
        coords = np.unravel_index(np.arange(self.n_states), self.shape)
        a = self.actions[pol]
        c = self.state_cost.reshape(-1).copy()
        for k in range(self.K):
            c += self.sense * self.action_cost[k][a[:, k], coords[k]]
        return c


@dataclass
class GainBiasSolution:
    gain: float
    bias: np.ndarray
    policy: np.ndarray  # action index per flattened state
    sweeps: int
    span: float
    mdp: TruncatedJointMdp

    def policy_levels(self, k: int = 0) -> np.ndarray:
        """Level of project ``k`` chosen in each joint state."""
        return self.mdp.actions[self.policy][:, k].reshape(self.mdp.shape)


def default_cap(station: StationModel, tail_mass=1e-9, floor=60, ceiling=400,
                level=None) -> int:
    """Smallest cap with geometric tail mass below ``tail_mass`` at
    service level ``level`` (default: full service), clamped to
    ``[floor, ceiling]``."""
    mu = float(station.mu[-1 if level is None else int(level)])
    rho = station.arrival_rate / mu if mu > 0 else np.inf
    if rho >= 1:
        return ceiling
    n = math.ceil(math.log(tail_mass) / math.log(rho))
    return int(min(max(n, floor), ceiling))


def _enumerate_actions(max_levels, budget):
    acts = [a for a in product(*(range(L + 1) for L in max_levels))
            if sum(a) <= budget]
    if not acts:
        raise ValueError("empty admissible action set")
    return np.array(sorted(acts), dtype=int)


def build_joint(models, resource: int, caps=None) -> TruncatedJointMdp:
    """Joint MDP for K stations (min cost) or K assets (max reward).

    Station state spaces are truncated at per-station caps with
    arrivals at the cap discarded; assets use their exact state
    spaces.  Projects evolve independently given the action.
    """
    models = list(models)
    if all(isinstance(m, StationModel) for m in models):
        if caps is None:
            caps = [default_cap(m) for m in models]
        shape = [c + 1 for c in caps]
        unif = sum(m.arrival_rate + float(m.mu[-1]) for m in models)
        up, down, ac = [], [], []
        for m, c in zip(models, caps):
            S = m.pool_size
            u = np.full((S + 1, c + 1), m.arrival_rate)
            u[:, c] = 0.0  # arrivals at the cap are lost
            d = np.repeat(m.mu[:, None], c + 1, axis=1)
            d[:, 0] = 0.0
            up.append(u)
            down.append(d)
            ac.append(np.zeros((S + 1, c + 1)))
        grids = np.indices(shape)
        cost = sum(m.holding_cost * grids[k] for k, m in enumerate(models))
        actions = _enumerate_actions([m.pool_size for m in models], resource)
        return TruncatedJointMdp(shape, actions, up, down, cost, ac, +1, unif)
    if all(isinstance(m, AssetModel) for m in models):
        shape = [m.top_state + 1 for m in models]
        unif = sum(m.uniformization_rate() for m in models)
        up, down, ac = [], [], []
        for m in models:
            A, R = m.top_state, m.max_level
            u = np.zeros((R + 1, A + 1))
            u[:, :A] = m.up_rates
            d = np.zeros((R + 1, A + 1))
            d[:, 1:] = m.down_rates
            up.append(u)
            down.append(d)
            ac.append(np.zeros((R + 1, A + 1)))
        grids = np.indices(shape)
        reward = sum(m.returns[grids[k]] for k, m in enumerate(models))
        actions = _enumerate_actions([m.max_level for m in models], resource)
        return TruncatedJointMdp(shape, actions, up, down, reward, ac, -1, unif)
    raise TypeError("models must be all StationModel or all AssetModel")


def build_station_q(station: StationModel, h: float, cap: int) -> TruncatedJointMdp:
    """Single-station charged problem: cost rate ``h n + a``."""
    S = station.pool_size
    lam = station.arrival_rate
    up = np.full((S + 1, cap + 1), lam)
    up[:, cap] = 0.0
    down = np.repeat(station.mu[:, None], cap + 1, axis=1)
    down[:, 0] = 0.0
    ac = np.repeat(np.arange(S + 1, dtype=float)[:, None], cap + 1, axis=1)
    cost = h * np.arange(cap + 1, dtype=float)
    actions = np.arange(S + 1, dtype=int)[:, None]
    return TruncatedJointMdp((cap + 1,), actions, [up], [down], cost, [ac],
                             +1, lam + float(station.mu[S]))


def build_asset_q(asset: AssetModel, h: float) -> TruncatedJointMdp:
    """Single-asset charged problem: reward rate ``h d(n) - a``."""
    A, R = asset.top_state, asset.max_level
    up = np.zeros((R + 1, A + 1))
    up[:, :A] = asset.up_rates
    down = np.zeros((R + 1, A + 1))
    down[:, 1:] = asset.down_rates
    ac = np.repeat(np.arange(R + 1, dtype=float)[:, None], A + 1, axis=1)
    reward = h * asset.returns
    actions = np.arange(R + 1, dtype=int)[:, None]
    return TruncatedJointMdp((A + 1,), actions, [up], [down], reward, [ac],
                             -1, asset.uniformization_rate())


def relative_value_iteration(mdp: TruncatedJointMdp, span_tol=SPAN_TOL,
                             max_sweeps=2_000_000) -> GainBiasSolution:
    """Span-convergent RVI with the all-zeros reference state.

    The gain estimate is the midpoint of the per-sweep increment
    bounds, rescaled to original time units; the greedy policy uses
    maximal-action tie-breaking.
    """
    v = np.zeros(mdp.shape)
    for sweep in range(1, max_sweeps + 1):
        v_new, _ = mdp.bellman(v)
        diff = v_new - v
        lo, hi = float(diff.min()), float(diff.max())
        v = v_new - v_new.flat[0]
        if hi - lo < span_tol:
            gain = 0.5 * (lo + hi) * mdp.unif
            policy = mdp.greedy_policy(v)
            return GainBiasSolution(gain=gain, bias=v.reshape(-1),
                                    policy=policy, sweeps=sweep,
                                    span=hi - lo, mdp=mdp)
    raise RuntimeError(f"RVI did not reach span {span_tol} in {max_sweeps} sweeps")


def _gain_bias_solve(mdp, policy):
    """Exact gain/bias of a fixed policy via a sparse linear solve."""
    P = mdp.policy_matrix(policy)
    n = mdp.n_states
    c_step = mdp.policy_cost(policy) / mdp.unif
    anchor = sp.csr_matrix(([1.0], ([0], [0])), shape=(1, n))
    A = sp.bmat([[sp.eye(n) - P, np.ones((n, 1))],
                 [anchor, None]], format="csr")
    rhs = np.concatenate([c_step, [0.0]])
    sol = spla.spsolve(A, rhs)
    v = sol[:n]
    gain = sol[n] * mdp.unif
    return gain, v


def evaluate_policy(mdp: TruncatedJointMdp, policy) -> float:
    """Average cost/reward rate of a fixed admissible policy."""
    if mdp.n_states <= DIRECT_SOLVE_LIMIT:
        gain, _ = _gain_bias_solve(mdp, policy)
        return gain
    P = mdp.policy_matrix(policy)
    c_step = mdp.policy_cost(policy) / mdp.unif
    v = np.zeros(mdp.n_states)
    for _ in range(2_000_000):
        v_new = c_step + P.dot(v)
        diff = v_new - v
        lo, hi = float(diff.min()), float(diff.max())
        v = v_new - v_new[0]
        if hi - lo < SPAN_TOL:
            return 0.5 * (lo + hi) * mdp.unif
    raise RuntimeError("policy evaluation did not converge")


def policy_iteration(mdp: TruncatedJointMdp, max_iters=500,
                     initial_policy=None) -> GainBiasSolution:
    """Howard policy iteration with exact sparse evaluations.

    Improvement sticks with the incumbent action unless a strictly
    better one exists, which rules out cycling among ties.  The
    returned solution is certified by its Bellman residual span.
    ``initial_policy`` (action indices per state) warm-starts the
    iteration; a good heuristic policy cuts the iteration count on
    large truncations.
    """
    if initial_policy is None:
        policy = mdp.greedy_policy(np.zeros(mdp.shape))
    else:
        policy = np.asarray(initial_policy, dtype=int).reshape(-1).copy()
        if policy.shape != (mdp.n_states,):
            raise ValueError("initial_policy must hold one action per state")
    gain = v = None
    for it in range(1, max_iters + 1):
        gain, v = _gain_bias_solve(mdp, policy)
        vg = v.reshape(mdp.shape)
        new_policy = mdp.greedy_policy(vg)
        # keep incumbent actions that remain optimal within tolerance
        vu, vd = mdp._shifted_diffs(vg)
        keep = np.zeros(mdp.n_states, dtype=bool)
        if mdp.K == 1:
            scores = (mdp.up[0] * vu[0][None, :] + mdp.down[0] * vd[0][None, :]
                      + mdp.sense * mdp.action_cost[0])
            eff = scores if mdp.sense > 0 else -scores
            best = eff.min(0)
            cur = eff[policy, np.arange(mdp.n_states)]
            keep = cur <= best + TIE_TOL * (1 + np.abs(best))
        else:
            best = np.full(mdp.shape, np.inf)
            per_state_cur = np.empty(mdp.n_states)
            for i in range(mdp.n_actions):
                s = mdp._action_score(i, vu, vd)
                eff = (s if mdp.sense > 0 else -s).reshape(-1)
                np.minimum(best.reshape(-1), eff, out=best.reshape(-1))
                per_state_cur[policy == i] = eff[policy == i]
            keep = per_state_cur <= best.reshape(-1) + TIE_TOL * (1 + np.abs(best.reshape(-1)))
        new_policy[keep] = policy[keep]
        if np.array_equal(new_policy, policy):
            v_next, _ = mdp.bellman(vg)
            resid = v_next - vg
            span = float(resid.max() - resid.min())
            return GainBiasSolution(gain=gain, bias=v, policy=policy,
                                    sweeps=it, span=span, mdp=mdp)
        policy = new_policy
    raise RuntimeError("policy iteration did not converge")


def best_static(models, resource: int):
    """Best fixed allocation: closed-form per-project stationary rates.

    Stations: M/M/1 mean-queue cost, infinite when unstable.  Assets:
    stationary birth-death return.  Returns ``(allocation, gain)``.
    """
    models = list(models)
    if all(isinstance(m, StationModel) for m in models):
        acts = _enumerate_actions([m.pool_size for m in models], resource)
        best, best_a = np.inf, None
        for a in acts:
            cost = 0.0
            for m, lvl in zip(models, a):
                rho = m.arrival_rate / float(m.mu[lvl]) if m.mu[lvl] > 0 else np.inf
                if rho >= 1:
                    cost = np.inf
                    break
                cost += m.holding_cost * rho / (1 - rho)
            if cost < best:
                best, best_a = cost, tuple(int(x) for x in a)
        return best_a, best
    if all(isinstance(m, AssetModel) for m in models):
        acts = _enumerate_actions([m.max_level for m in models], resource)
        best, best_a = -np.inf, None
        for a in acts:
            reward = 0.0
            for m, lvl in zip(models, a):
                pi = birth_death_stationary(m.up_rates[lvl], m.down_rates[lvl])
                reward += float(pi @ m.returns)
            if reward > best:
                best, best_a = reward, tuple(int(x) for x in a)
        return best_a, best
    raise TypeError("models must be all StationModel or all AssetModel")


def birth_death_stationary(up, down):
    """Stationary distribution of a finite birth-death chain.

    ``up[n]`` is the rate ``n -> n+1`` (length N), ``down[n]`` the
    rate ``n+1 -> n`` (length N).  Zero up-rates cut off all mass
    above them.
    """
    up = np.asarray(up, dtype=float)
    down = np.asarray(down, dtype=float)
    if np.any(down <= 0):
        raise ValueError("down rates must be positive")
    w = np.ones(len(up) + 1)
    for n in range(len(up)):
        w[n + 1] = w[n] * up[n] / down[n]
    return w / w.sum()


def percentage_excess(gamma_policy: float, gamma_opt: float, sense: str) -> float:
    """Percentage by which a policy trails the optimum, floored at 0."""
    if sense in ("minimize-cost", "min", "cost"):
        if gamma_opt <= 0:
            raise ValueError("nonpositive optimal cost rate")
        return max(0.0, 100.0 * (gamma_policy - gamma_opt) / gamma_opt)
    if sense in ("maximize-reward", "max", "reward"):
        if gamma_opt <= 0:
            raise ValueError("nonpositive optimal reward rate")
        return max(0.0, 100.0 * (gamma_opt - gamma_policy) / gamma_opt)
    raise ValueError(f"unknown sense {sense!r}")
