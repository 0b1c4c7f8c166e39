"""Asset management on a finite quality ladder.

An asset occupies a state ``n = 0..A`` and earns returns at rate
``d(n)``.  Applying resource at level ``a`` raises its upward rate
``lambda(a, n)`` (increasing concave in ``a``) and lowers its downward
rate ``mu(a, n)`` (decreasing convex in ``a``).  The charged
single-asset problem maximizes ``h d(n) - a`` on average; this module
computes its optimal policies, the multiplier breakpoints at which
they change as ``h`` falls, and the resulting index table.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import IndexTable, PolicyTable

__all__ = [
    "AssetModel",
    "AssetReport",
    "AssetPassageStats",
    "AssetBreakpoints",
    "solve_Q_asset",
    "uniformize_asset",
    "asset_first_passage",
    "asset_breakpoints",
    "asset_indices",
    "myopic_action",
]

SWEEP_GUARD = 1e-7       # relative step below a breakpoint when re-solving
STAGNATION_TOL = 1e-12   # relative progress floor for the descending sweep


@dataclass(frozen=True)
class AssetModel:
    """Rates and returns of one asset.

    ``up_rates[a, n]`` is the rate of ``n -> n+1`` for ``n = 0..A-1``;
    ``down_rates[a, n-1]`` the rate of ``n -> n-1`` for ``n = 1..A``.
    ``returns[n]`` is the return rate ``d(n)``.
    """

    up_rates: np.ndarray
    down_rates: np.ndarray
    returns: np.ndarray

    def __post_init__(self):
        up = np.asarray(self.up_rates, dtype=float)
        down = np.asarray(self.down_rates, dtype=float)
        d = np.asarray(self.returns, dtype=float)
        object.__setattr__(self, "up_rates", up)
        object.__setattr__(self, "down_rates", down)
        object.__setattr__(self, "returns", d)
        if up.ndim != 2 or up.shape != down.shape:
            raise ValueError("up_rates/down_rates must be equal-shape 2-D arrays")
        if d.shape != (up.shape[1] + 1,):
            raise ValueError("returns must have one entry per state")
        if np.any(up < 0) or np.any(down <= 0):
            raise ValueError("up rates must be nonnegative, down rates positive")
        if np.any(d < 0):
            raise ValueError("returns must be nonnegative")

    @property
    def max_level(self) -> int:
        return self.up_rates.shape[0] - 1

    @property
    def top_state(self) -> int:
        return self.up_rates.shape[1]

    @classmethod
    def from_functions(cls, lam, mu, d, max_level: int, top_state: int):
        """Build from callables ``lam(a, n)``, ``mu(a, n)``, ``d(n)``."""
        up = np.array([[lam(a, n) for n in range(top_state)]
                       for a in range(max_level + 1)], dtype=float)
        down = np.array([[mu(a, n) for n in range(1, top_state + 1)]
                         for a in range(max_level + 1)], dtype=float)
        ret = np.array([d(n) for n in range(top_state + 1)], dtype=float)
        return cls(up, down, ret)

    @classmethod
    def separable(cls, phi: float, xi, eta, d, max_level: int, top_state: int):
        """Rates ``lam = a/(a+phi) xi(n)`` and ``mu = phi/(a+phi) eta(n)``."""
        return cls.from_functions(
            lambda a, n: a / (a + phi) * xi(n),
            lambda a, n: phi / (a + phi) * eta(n),
            d, max_level, top_state,
        )

    def uniformization_rate(self) -> float:
        """Maximal exit rate: top level upward plus zero level downward."""
        up_pad = np.concatenate([self.up_rates[-1], [0.0]])
        down_pad = np.concatenate([[0.0], self.down_rates[0]])
        return float(np.max(up_pad + down_pad))

    def validate(self) -> "AssetReport":
        """Structural checks behind full indexability, reported not raised."""
        problems = []
        dup = np.diff(self.up_rates, axis=0)
        if np.any(dup < -1e-12):
            problems.append("up rates not nondecreasing in level")
        if self.max_level >= 2 and np.any(np.diff(dup, axis=0) > 1e-12):
            problems.append("up rates not concave in level")
        ddn = np.diff(self.down_rates, axis=0)
        if np.any(ddn > 1e-12):
            problems.append("down rates not nonincreasing in level")
        if self.max_level >= 2 and np.any(np.diff(ddn, axis=0) < -1e-12):
            problems.append("down rates not convex in level")
        if np.any(np.diff(self.returns) < -1e-12):
            problems.append("returns not nondecreasing in state")
        return AssetReport(passed=not problems, problems=problems)


@dataclass
class AssetReport:
    passed: bool
    problems: list[str] = field(default_factory=list)

    def __bool__(self):
        return self.passed


def _policy_rates(asset: AssetModel, levels) -> tuple[np.ndarray, np.ndarray]:
    """(lam_n for n=0..A-1, mu_n for n=1..A) under a fixed policy."""
    lv = np.asarray(levels, dtype=int)
    A = asset.top_state
    if lv.shape != (A + 1,):
        raise ValueError(f"policy must give a level for each of {A + 1} states")
    lam = asset.up_rates[lv[:A], np.arange(A)]
    mu = asset.down_rates[lv[1:], np.arange(A)]
    return lam, mu


@dataclass
class AssetPassageStats:
    """Passage statistics of a fixed policy on the state ladder.

    ``t[n]``, ``g[n]``, ``p[n]`` (indices 1..A) are the expected
    duration, integrated return and integrated resource level of the
    passage from ``n`` to ``n - 1``.  ``gain_slope``/``gain_offset``
    express the average reward rate ``gamma(h) = gain_slope * h +
    gain_offset`` of the policy.
    """

    t: np.ndarray
    g: np.ndarray
    p: np.ndarray
    gain_slope: float
    gain_offset: float
    levels: np.ndarray

    def gain(self, h: float) -> float:
        return self.gain_slope * h + self.gain_offset

    def delta_v(self, h: float) -> np.ndarray:
        """Bias increments ``v(n) - v(n-1)``, index 1..A (entry 0 unused)."""
        gamma = self.gain(h)
        out = np.zeros_like(self.t)
        out[1:] = h * self.g[1:] - self.p[1:] - gamma * self.t[1:]
        return out

    def delta_v_coeffs(self) -> tuple[np.ndarray, np.ndarray]:
        """Affine coefficients: ``delta_v(h)[n] = C[n] h + D[n]``."""
        C = np.zeros_like(self.t)
        D = np.zeros_like(self.t)
        C[1:] = self.g[1:] - self.gain_slope * self.t[1:]
        D[1:] = -self.p[1:] - self.gain_offset * self.t[1:]
        return C, D


def asset_first_passage(asset: AssetModel, u) -> AssetPassageStats:
    """Downward passage statistics and average reward of policy ``u``.

    The recursion runs from the reflecting top state down: at ``A``
    the passage is a bare service, below it an upward excursion may
    intervene first.  The gain comes from the renewal cycle at the
    bottom state; when the policy's upward rate at 0 vanishes the
    chain is absorbed there and the gain is its stay reward.
    """
    levels = u.levels if isinstance(u, PolicyTable) else np.asarray(u, dtype=int)
    A = asset.top_state
    lam, mu = _policy_rates(asset, levels)
    d = asset.returns
    t = np.zeros(A + 1)
    g = np.zeros(A + 1)
    p = np.zeros(A + 1)
    t[A] = 1.0 / mu[A - 1]
    g[A] = d[A] / mu[A - 1]
    p[A] = levels[A] / mu[A - 1]
    for n in range(A - 1, 0, -1):
        m = mu[n - 1]
        t[n] = (1.0 + lam[n] * t[n + 1]) / m
        g[n] = (d[n] + lam[n] * g[n + 1]) / m
        p[n] = (levels[n] + lam[n] * p[n + 1]) / m
    lam0 = lam[0]
    if lam0 > 0:
        cycle = t[1] + 1.0 / lam0
        slope = (g[1] + d[0] / lam0) / cycle
        offset = -(p[1] + levels[0] / lam0) / cycle
    else:
        slope = d[0]
        offset = -float(levels[0])
    return AssetPassageStats(t=t, g=g, p=p, gain_slope=slope,
                             gain_offset=offset, levels=levels)


def uniformize_asset(asset: AssetModel) -> tuple[AssetModel, float]:
    """Rescale the transition rates so the maximal exit rate is 1.

    Returns the scaled model and the scale factor.  Stationary
    behavior depends only on rate ratios, so charged-problem policies
    and gains are unchanged by the rescaling.
    """
    scale = asset.uniformization_rate()
    if scale <= 0:
        raise ValueError("all rates zero")
    return AssetModel(asset.up_rates / scale, asset.down_rates / scale,
                      asset.returns), scale


def solve_Q_asset(asset: AssetModel, h: float):
    """Optimal policy, gain and bias increments at multiplier ``h``.

    Exact policy iteration on the full ladder with maximal-action
    tie-breaking.  Returns ``(PolicyTable, gain, delta_v)`` where
    ``delta_v[n] = v(n) - v(n-1)`` for ``n = 1..A`` (entry 0 unused).
    """
    from . import mdp  # deferred: mdp builds on this module's AssetModel

    sol = mdp.policy_iteration(mdp.build_asset_q(asset, h))
    levels = sol.policy_levels(0)
    delta_v = np.zeros(asset.top_state + 1)
    delta_v[1:] = np.diff(sol.bias)
    return PolicyTable(levels=levels), sol.gain, delta_v


def _optimality_margins(asset: AssetModel, stats: AssetPassageStats):
    """Affine-in-h margins whose nonnegativity certifies optimality.

    For every state ``n`` the fixed policy must beat its two
    neighboring levels.  Each margin is ``alpha h + beta``; the policy
    is optimal exactly while all margins are nonnegative.  Edge levels
    drop the missing comparison.
    """
    A = asset.top_state
    R = asset.max_level
    C, D = stats.delta_v_coeffs()
    lv = stats.levels
    margins = []  # (n, direction, alpha, beta); direction +1 = raise, -1 = lower
    for n in range(A + 1):
        a = int(lv[n])
        cu = C[n + 1] if n < A else 0.0
        du = D[n + 1] if n < A else 0.0
        cd = C[n] if n > 0 else 0.0
        dd = D[n] if n > 0 else 0.0
        if a < R:
            dl = (asset.up_rates[a + 1, n] - asset.up_rates[a, n]) if n < A else 0.0
            dm = (asset.down_rates[a, n - 1] - asset.down_rates[a + 1, n - 1]) if n > 0 else 0.0
            # raising to a+1 must not pay: gain from extra drift <= unit charge
            alpha = -(dl * cu + dm * cd)
            beta = 1.0 - (dl * du + dm * dd)
            margins.append((n, +1, alpha, beta))
        if a > 0:
            dl = (asset.up_rates[a, n] - asset.up_rates[a - 1, n]) if n < A else 0.0
            dm = (asset.down_rates[a - 1, n - 1] - asset.down_rates[a, n - 1]) if n > 0 else 0.0
            # the last unit in place must still pay for itself
            alpha = dl * cu + dm * cd
            beta = dl * du + dm * dd - 1.0
            margins.append((n, -1, alpha, beta))
    return margins


@dataclass
class AssetBreakpoints:
    """Optimal-policy intervals of the charged problem.

    ``intervals`` lists ``(h_lo, h_hi, PolicyTable)`` in descending
    order of ``h``; the first entry has ``h_hi = inf`` and the last
    ``h_lo = 0``.  ``breakpoints`` are the interior boundaries, also
    descending.
    """

    asset: AssetModel
    intervals: list[tuple[float, float, PolicyTable]]
    breakpoints: list[float]

    def policy_at(self, h: float) -> PolicyTable:
        if h <= 0:
            raise ValueError("multiplier must be positive")
        for h_lo, h_hi, pol in self.intervals:
            if h_lo < h <= h_hi or (h_hi == np.inf and h > h_lo):
                return pol
        raise RuntimeError("interval cover has a gap")  # pragma: no cover


def asset_breakpoints(asset: AssetModel, max_intervals: int = 10_000) -> AssetBreakpoints:
    """Descending multiplier sweep over optimal policies.

    Starts above every policy change (found by doubling the
    multiplier until the optimal policy uses maximal resource in every
    state below the top), then repeatedly finds the largest multiplier
    at which the current policy's optimality margins can vanish,
    re-solves just below it and records the interval.  The sweep makes
    no single-switch assumption; a margin root at which the re-solved
    policy is unchanged is skipped as spurious.
    """
    h = 1.0
    pol, _, _ = solve_Q_asset(asset, h)
    # climb until the current optimal policy has no margin root above h;
    # the margins are affine in h, so it then stays optimal on [h, inf)
    for _ in range(260):
        stats = asset_first_passage(asset, pol)
        above = [-beta / alpha for _n, _dr, alpha, beta in
                 _optimality_margins(asset, stats)
                 if alpha != 0.0 and -beta / alpha > h]
        if not above:
            break
        h = max(2.0 * h, 2.0 * max(above))
        pol, _, _ = solve_Q_asset(asset, h)
    else:
        raise RuntimeError("no terminal policy for large multipliers")

    intervals = []
    breakpoints = []
    h_hi = np.inf
    h_cur = h
    for _ in range(max_intervals):
        stats = asset_first_passage(asset, pol)
        root = 0.0
        for n, direction, alpha, beta in _optimality_margins(asset, stats):
            if alpha == 0.0:
                continue
            r = -beta / alpha
            if 0.0 < r < h_cur * (1.0 - STAGNATION_TOL):
                root = max(root, r)
        if root <= 0.0:
            intervals.append((0.0, h_hi, pol))
            break
        nxt, _, _ = solve_Q_asset(asset, root * (1.0 - SWEEP_GUARD))
        if np.array_equal(nxt.levels, pol.levels):
            # margin touched zero without a policy change; move past it
            h_cur = root * (1.0 - SWEEP_GUARD)
            continue
        intervals.append((root, h_hi, pol))
        breakpoints.append(root)
        h_hi = root
        h_cur = root * (1.0 - SWEEP_GUARD)
        pol = nxt
    else:
        raise RuntimeError("breakpoint sweep exceeded its interval budget")
    return AssetBreakpoints(asset=asset, intervals=intervals,
                            breakpoints=breakpoints)


def asset_indices(asset: AssetModel,
                  sweep: AssetBreakpoints | None = None) -> IndexTable:
    """Index table ``W(a, n)`` from the breakpoint sweep.

    The resource charge per unit level in the charged problem is
    ``1/h``, so the fair charge for the step ``a -> a+1`` in state
    ``n`` is the reciprocal of the smallest multiplier at which the
    optimal level at ``n`` exceeds ``a``.  Levels never reached get
    index 0 (the step is not worth any positive charge).
    """
    if sweep is None:
        sweep = asset_breakpoints(asset)
    R, A = asset.max_level, asset.top_state
    values = np.zeros((R, A + 1))
    # ascending in h: last interval of the descending list is (0, ., .)
    asc = list(reversed(sweep.intervals))
    for n in range(A + 1):
        for a in range(R):
            for h_lo, _h_hi, polt in asc:
                if polt[n] > a:
                    if h_lo <= 0.0:
                        raise RuntimeError(
                            f"level {a + 1} at state {n} active at arbitrarily "
                            "small multipliers"
                        )
                    values[a, n] = 1.0 / h_lo
                    break
    return IndexTable(values)


def myopic_action(assets, state, resource: int) -> tuple[int, ...]:
    """Allocation maximizing the instantaneous drift of the return rate.

    Scores ``sum_k lam_k (d(n_k+1) - d(n_k)) + mu_k (d(n_k-1) - d(n_k))``
    over all feasible integer allocations; ties go to the
    lexicographically smallest allocation.
    """
    from itertools import product

    assets = list(assets)
    if len(state) != len(assets):
        raise ValueError("state/assets length mismatch")
    best, best_a = -np.inf, None
    for a in product(*(range(m.max_level + 1) for m in assets)):
        if sum(a) > resource:
            continue
        score = 0.0
        for m, lvl, n in zip(assets, a, state):
            d = m.returns
            if n < m.top_state:
                score += m.up_rates[lvl, n] * (d[n + 1] - d[n])
            if n > 0:
                score += m.down_rates[lvl, n - 1] * (d[n - 1] - d[n])
        if score > best + 1e-12:
            best, best_a = score, a
    return best_a
