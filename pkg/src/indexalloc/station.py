"""Exact index computation for a single service station.

A station is an M/M/1-type queue whose service rate depends on the
size of the team deployed.  With a charge of 1 per server per unit
time and holding-cost multiplier ``h``, the single-station control
problem has monotone optimal policies, and the optimal policy as a
function of ``h`` changes at a descending sequence of breakpoints
``j_1 > j_2 > ...``.  Between consecutive breakpoints the optimal
policy is constant, and consecutive policies differ by one server at
one queue length.  Station indices are recovered from the breakpoints
as ``W(a, n) = h / j`` where ``j`` is the breakpoint at which the
level at head count ``n`` drops from ``a + 1`` to ``a``.

All first-passage quantities (expected time, integrated head count,
integrated deployment for the one-step-down passage) admit closed
backward recursions on the controlled birth-death chain, with exact
constant tails once the policy saturates at the full pool size.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import IndexTable, PolicyTable

__all__ = [
    "StationModel",
    "FirstPassageStats",
    "BreakpointSequence",
    "StationReport",
    "check_assumption1",
    "first_passage_stats",
    "initial_breakpoint",
    "compute_breakpoints",
    "station_indices",
    "delta_v_profile",
    "policy_gain",
]

#: relative guard below the current breakpoint when accepting roots
ROOT_GUARD = 1e-12
#: consecutive breakpoints closer than this (relative) are flagged merged
MERGE_TOL = 1e-10


@dataclass(frozen=True)
class StationModel:
    """One service station: Poisson arrivals, team-size-dependent service.

    ``mu[a]`` is the service rate with ``a`` pool servers deployed,
    ``a = 0..S``.  Construction validates shapes and finiteness only;
    the modelling conditions (strictly increasing concave ``mu``,
    stability) are checked by :func:`check_assumption1` so that
    violating instances can still be built and reported on.
    """

    arrival_rate: float
    mu: np.ndarray
    holding_cost: float = 1.0

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        object.__setattr__(self, "mu", mu)
        if mu.ndim != 1 or len(mu) < 2:
            raise ValueError("mu must be a 1-D array of length S + 1 >= 2")
        if self.arrival_rate <= 0:
            raise ValueError("arrival_rate must be positive")
        if self.holding_cost <= 0:
            raise ValueError("holding_cost must be positive")
        if not np.all(np.isfinite(mu)) or np.any(mu < 0):
            raise ValueError("service rates must be finite and nonnegative")

    @property
    def pool_size(self) -> int:
        return len(self.mu) - 1

    def min_stabilizing_level(self) -> int | None:
        """Smallest integer level with ``mu(a) > lambda``, or None."""
        above = np.nonzero(self.mu > self.arrival_rate)[0]
        return int(above[0]) if len(above) else None


@dataclass
class StationReport:
    passed: bool
    failures: list[str] = field(default_factory=list)
    min_levels: list[int] = field(default_factory=list)

    def __bool__(self):
        return self.passed


def check_assumption1(stations, pool_size: int) -> StationReport:
    """Validate modelling conditions for a set of stations sharing a pool.

    Per station: ``mu`` strictly increasing and strictly concave on
    the integers.  Jointly: the minimum stabilizing levels must sum to
    strictly less than the pool size, which guarantees stable
    policies exist.
    """
    failures = []
    min_levels = []
    for k, st in enumerate(stations):
        mu = st.mu
        if len(mu) != pool_size + 1:
            failures.append(f"station {k}: mu has {len(mu) - 1} levels, pool is {pool_size}")
        if np.any(np.diff(mu) <= 0):
            failures.append(f"station {k}: mu not strictly increasing")
        if len(mu) >= 3 and np.any(np.diff(mu, 2) >= 0):
            failures.append(f"station {k}: mu not strictly concave")
        lvl = st.min_stabilizing_level()
        if lvl is None:
            failures.append(f"station {k}: mu(S) = {mu[-1]} <= lambda = {st.arrival_rate}")
        else:
            min_levels.append(lvl)
    if len(min_levels) == len(list(stations)) and sum(min_levels) >= pool_size:
        failures.append(
            f"sum of minimum stabilizing levels {sum(min_levels)} >= pool {pool_size}"
        )
    return StationReport(passed=not failures, failures=failures, min_levels=min_levels)


@dataclass
class FirstPassageStats:
    """One-step-down passage quantities under a fixed stable policy.

    For head count ``n >= 1``: ``t[n]`` is the expected time to go
    from ``n`` to ``n - 1``; ``g[n]`` and ``w[n]`` are the expected
    integrated head count and integrated deployment over that passage,
    so that ``chi(n) = g[n] / t[n]`` and ``psi(n) = w[n] / t[n]`` are
    the per-unit-time averages.  ``alpha`` is the busy-period weight
    ``T(1) / (T(1) + 1/lambda)``.  Index 0 is unused.
    """

    t: np.ndarray
    g: np.ndarray
    w: np.ndarray
    alpha: float

    def chi(self, n: int) -> float:
        return self.g[n] / self.t[n]

    def psi(self, n: int) -> float:
        return self.w[n] / self.t[n]


def _policy_levels(station: StationModel, u, n_hi: int) -> np.ndarray:
    """Levels for n = 0..n_hi, extending with the full pool beyond ``u``."""
    S = station.pool_size
    lv = np.asarray(u.levels if isinstance(u, PolicyTable) else u, dtype=int)
    out = np.full(n_hi + 1, S, dtype=int)
    m = min(len(lv), n_hi + 1)
    out[:m] = lv[:m]
    return out


def first_passage_stats(station: StationModel, u, n_hi: int | None = None) -> FirstPassageStats:
    """Passage quantities for policy ``u`` (full pool beyond its range).

    The backward recursions, with ``m_n = mu(u(n))`` and arrival rate
    ``lam``, are ``t(n) = (1 + lam t(n+1)) / m_n``,
    ``g(n) = (n + lam g(n+1)) / m_n`` and
    ``w(n) = (u(n) + lam w(n+1)) / m_n``, anchored at the exact
    constant-tail solution where the policy deploys the full pool.
    """
    lam = station.arrival_rate
    S = station.pool_size
    mu_S = float(station.mu[S])
    if mu_S <= lam:
        raise ValueError("mu(S) <= lambda: no stable policy exists")
    raw = u.levels if isinstance(u, PolicyTable) else u
    if n_hi is None:
        n_hi = len(raw) - 1
    levels = _policy_levels(station, raw, n_hi)
    gap = mu_S - lam
    # exact tail at the first index where the policy is already full-pool
    t = np.empty(n_hi + 2)
    g = np.empty(n_hi + 2)
    w = np.empty(n_hi + 2)
    t[n_hi + 1] = 1.0 / gap
    g[n_hi + 1] = (n_hi + 1) / gap + lam / gap**2
    w[n_hi + 1] = S / gap
    for n in range(n_hi, 0, -1):
        m_n = float(station.mu[levels[n]])
        if m_n <= 0:
            raise ValueError(f"mu(u({n})) = 0: state {n} cannot be left downward")
        t[n] = (1.0 + lam * t[n + 1]) / m_n
        g[n] = (n + lam * g[n + 1]) / m_n
        w[n] = (levels[n] + lam * w[n + 1]) / m_n
    t[0] = g[0] = w[0] = np.nan
    alpha = t[1] / (t[1] + 1.0 / lam)
    return FirstPassageStats(t=t, g=g, w=w, alpha=alpha)


def initial_breakpoint(station: StationModel) -> float:
    """Largest multiplier below which the full-pool policy stops being optimal."""
    S = station.pool_size
    mu_S = float(station.mu[S])
    lam = station.arrival_rate
    return (mu_S - lam) * (1.0 / (mu_S - station.mu[S - 1]) - S / mu_S)


def _passage_coeffs(stats: FirstPassageStats, n_hi: int):
    """Affine coefficients (A, B) with Delta v(h, n) = A[n] h + B[n].

    ``A[n] = (chi(n) - alpha chi(1)) t(n)``, ``B[n]`` analogous with
    the deployment averages; both reduce to integrated quantities.
    """
    n = np.arange(1, n_hi + 1)
    chi1 = stats.g[1] / stats.t[1]
    psi1 = stats.w[1] / stats.t[1]
    A = stats.g[1:n_hi + 1] - stats.alpha * chi1 * stats.t[1:n_hi + 1]
    B = stats.w[1:n_hi + 1] - stats.alpha * psi1 * stats.t[1:n_hi + 1]
    out_A = np.full(n_hi + 1, np.nan)
    out_B = np.full(n_hi + 1, np.nan)
    out_A[1:] = A
    out_B[1:] = B
    return out_A, out_B


@dataclass
class BreakpointSequence:
    """Descending multiplier breakpoints with the policy on each interval.

    ``policies[m]`` is optimal on the open interval
    ``(breakpoints[m], breakpoints[m-1])`` (with ``breakpoints[-1]``
    read as ``+inf``); ``policies[0]`` deploys the full pool in every
    nonempty state.  ``switch_states[m]`` is the head count whose
    level drops by one at ``breakpoints[m]``.  ``exhausted`` is True
    when the sweep ended because the next breakpoint was nonpositive
    (remaining levels persist for every positive multiplier).
    """

    station: StationModel
    breakpoints: np.ndarray
    policies: list[np.ndarray]
    switch_states: np.ndarray
    depth: int
    exhausted: bool
    merged_events: int = 0

    def policy_at(self, h: float) -> PolicyTable:
        """Maximal optimal policy at multiplier ``h > 0``."""
        # number of breakpoints strictly above h
        m = int(np.searchsorted(-self.breakpoints, -h, side="left"))
        return PolicyTable(levels=self.policies[m].copy(), monotone=True)

    def to_multiplier_family(self) -> dict[float, PolicyTable]:
        """Charge-space family: multiplier ``W = h_cost / j`` ascending.

        Includes the anchor ``W = 0`` carrying the full-pool policy.
        """
        h = self.station.holding_cost
        fam = {0.0: PolicyTable(levels=self.policies[0].copy(), monotone=True)}
        for j, pol in zip(self.breakpoints, self.policies[1:]):
            if j > 0:
                fam[h / j] = PolicyTable(levels=pol.copy(), monotone=True)
        return fam


def compute_breakpoints(
    station: StationModel,
    depth: int = 50,
    max_iters: int | None = None,
) -> BreakpointSequence:
    """Run the descending-breakpoint sweep until every head count up to
    ``depth`` has been resolved or the next breakpoint is nonpositive.

    Each iteration recomputes passage quantities under the current
    policy, solves one linear equation per candidate head count for
    the multiplier at which that level-drop becomes cost-neutral, and
    decrements the level at the head count achieving the largest such
    multiplier.
    """
    report = check_assumption1([station], station.pool_size)
    # joint stability across stations is not this function's concern
    hard = [f for f in report.failures if "stabilizing levels" not in f]
    if hard:
        raise ValueError("invalid station: " + "; ".join(hard))
    S = station.pool_size
    lam = station.arrival_rate
    mu = station.mu
    levels = np.full(depth + 1, S, dtype=int)
    levels[0] = 0
    policies = [levels.copy()]
    js: list[float] = []
    switches: list[int] = []
    j_cur = np.inf
    merged = 0
    exhausted = False
    if max_iters is None:
        max_iters = 4 * S * (depth + 50)
    for _ in range(max_iters):
        if np.all(levels[1:] == 0):
            break
        # N_m: first head count at the full pool (scan limit)
        at_S = np.nonzero(levels[1:] == S)[0]
        n_scan = int(at_S[0]) + 1 if len(at_S) else depth
        stats = first_passage_stats(station, levels, n_hi=n_scan)
        A, B = _passage_coeffs(stats, n_scan)
        if np.any(A[1:] <= 0):
            bad = int(np.nonzero(A[1:] <= 0)[0][0]) + 1
            raise RuntimeError(
                f"nonpositive passage coefficient A({bad}) = {A[bad]:.3e}; "
                "internal inconsistency in the breakpoint sweep"
            )
        best_j, best_n = -np.inf, -1
        bound = j_cur * (1.0 - ROOT_GUARD) if np.isfinite(j_cur) else np.inf
        for n in range(1, n_scan + 1):
            a = levels[n]
            if a == 0:
                continue
            dmu = mu[a] - mu[a - 1]
            root = (1.0 / dmu - B[n]) / A[n]
            if root <= bound and root > best_j:
                best_j, best_n = root, n
        if best_n < 0 or best_j <= 0:
            exhausted = True
            break
        if np.isfinite(j_cur) and best_j > j_cur * (1.0 - MERGE_TOL):
            merged += 1
        js.append(best_j)
        switches.append(best_n)
        j_cur = best_j
        levels = levels.copy()
        levels[best_n] -= 1
        policies.append(levels)
    else:
        raise RuntimeError("breakpoint sweep exceeded its iteration budget")
    return BreakpointSequence(
        station=station,
        breakpoints=np.array(js),
        policies=policies,
        switch_states=np.array(switches, dtype=int),
        depth=depth,
        exhausted=exhausted,
        merged_events=merged,
    )


def station_indices(
    station: StationModel,
    n_max: int,
    sequence: BreakpointSequence | None = None,
) -> IndexTable:
    """Index table ``W(a, n)`` for ``a = 0..S-1``, ``n = 0..n_max``.

    ``W(a, n) = h / j`` with ``j`` the breakpoint at which the level
    at ``n`` drops from ``a + 1`` to ``a``; ``+inf`` where the level
    never drops that far (it persists for every positive multiplier);
    identically 0 at the empty queue, which never consumes resource.
    Doubling the holding cost doubles every finite entry.
    """
    if sequence is None:
        sequence = compute_breakpoints(station, depth=n_max)
    if sequence.depth < n_max:
        raise ValueError(f"sequence depth {sequence.depth} < requested {n_max}")
    S = station.pool_size
    h = station.holding_cost
    values = np.full((S, n_max + 1), np.inf)
    values[:, 0] = 0.0
    # replay the switches: at breakpoint m the level at switch_states[m]
    # drops from policies[m][n] to policies[m+1][n] = policies[m][n] - 1
    for m, (j, n) in enumerate(zip(sequence.breakpoints, sequence.switch_states)):
        if n > n_max:
            continue
        a = int(sequence.policies[m][n]) - 1  # new level after the drop
        values[a, n] = h / j
    final = sequence.policies[-1]
    unresolved = [
        (a, n)
        for n in range(1, n_max + 1)
        for a in range(int(final[n]))
        if not np.isfinite(values[a, n])
    ]
    # unresolved entries below the final level are legitimate infinities
    # only when the sweep ended at a nonpositive next breakpoint
    if unresolved and not sequence.exhausted:
        raise ValueError(
            f"breakpoint sequence too shallow: unresolved entries {unresolved[:4]}"
        )
    table = IndexTable(values, capped=True)
    return table


def delta_v_profile(station: StationModel, h: float, u) -> np.ndarray:
    """Relative-value differences ``Delta v(h, n)`` for ``n = 1..len(u)-1``.

    Computed from the passage-quantity product form for the fixed
    policy ``u``; equals the optimal bias differences when ``u`` is
    optimal at multiplier ``h``.  Entry 0 is 0 by convention.
    """
    levels = np.asarray(u.levels if isinstance(u, PolicyTable) else u, dtype=int)
    n_hi = len(levels) - 1
    stats = first_passage_stats(station, levels, n_hi=n_hi)
    A, B = _passage_coeffs(stats, n_hi)
    out = A * h + B
    out[0] = 0.0
    return out


def policy_gain(station: StationModel, h: float, u) -> float:
    """Average cost rate of policy ``u`` at holding multiplier ``h``.

    Renewal argument over busy cycles: cost accrues only while the
    queue is nonempty, at average rate ``h chi(1) + psi(1)`` over a
    busy period of mean ``T(1)``, and the empty period has mean
    ``1/lambda``.
    """
    levels = np.asarray(u.levels if isinstance(u, PolicyTable) else u, dtype=int)
    stats = first_passage_stats(station, levels, n_hi=len(levels) - 1)
    lam = station.arrival_rate
    return (h * stats.g[1] + stats.w[1]) / (stats.t[1] + 1.0 / lam)
