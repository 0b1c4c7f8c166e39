"""Model-agnostic machinery for multi-project resource allocation.

A *project* consumes a divisible resource at one of the levels
``0..L`` and is calibrated by an index table ``W(a, x)``: the fair
charge for raising its resource level from ``a`` to ``a + 1`` in state
``x``.  Given one table per project, actions for the joint system are
built either greedily against a hard resource budget or by cutting
every table at a common multiplier (the relaxed problem).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "ProjectSpec",
    "SystemSpec",
    "IndexTable",
    "PolicyTable",
    "greedy_action",
    "lagrange_action",
    "validate_full_indexability",
    "index_from_policy_family",
    "IndexabilityReport",
]

MINIMIZE = "minimize-cost"
MAXIMIZE = "maximize-reward"


def _unit_consumption(a: int, x: int) -> float:
    return float(a)


@dataclass(frozen=True)
class ProjectSpec:
    """Static description of one project.

    ``consumption(a, x)`` gives the resource rate drawn at level ``a``
    in state ``x`` and must be nondecreasing in ``a``; the default
    identifies level with consumption.  ``state_count`` is the number
    of states (finite case) or the truncation cap plus one (countable
    case).
    """

    state_count: int
    max_level: int
    consumption: Callable[[int, int], float] = _unit_consumption
    cost_rate: Callable[[int, int], float] = lambda a, x: 0.0
    objective_sense: str = MINIMIZE

    def __post_init__(self):
        if self.state_count < 1:
            raise ValueError("state_count must be positive")
        if self.max_level < 0:
            raise ValueError("max_level must be nonnegative")
        if self.objective_sense not in (MINIMIZE, MAXIMIZE):
            raise ValueError(f"unknown objective sense {self.objective_sense!r}")
        # Spot-check monotone consumption on the full (finite) grid.
        for x in range(self.state_count):
            r_prev = -np.inf
            for a in range(self.max_level + 1):
                r = self.consumption(a, x)
                if r < 0 or not np.isfinite(r):
                    raise ValueError(f"consumption({a},{x}) = {r} invalid")
                if r < r_prev:
                    raise ValueError(
                        f"consumption not nondecreasing in level at state {x}"
                    )
                r_prev = r


@dataclass(frozen=True)
class SystemSpec:
    """A collection of projects sharing a resource stream of rate ``R``."""

    projects: tuple[ProjectSpec, ...]
    resource_rate: float

    def __post_init__(self):
        object.__setattr__(self, "projects", tuple(self.projects))
        if self.resource_rate < 0:
            raise ValueError("resource_rate must be nonnegative")
        # The all-zero action must be admissible in every joint state;
        # consumption is per-project so it suffices to check marginals.
        for k, p in enumerate(self.projects):
            worst = max(p.consumption(0, x) for x in range(p.state_count))
            if worst > self.resource_rate:
                raise ValueError(
                    f"project {k}: zero-level consumption {worst} exceeds budget"
                )


class IndexTable:
    """Index values ``W(a, x)`` for ``a = 0..L-1`` over a state range.

    Lookups use the extended conventions ``W(-1, x) = +inf`` and
    ``W(L, x) = 0``.  For countable state spaces represented up to a
    cap, lookups beyond the cap return the cap-row value and set
    :attr:`cap_hit`.
    """

    def __init__(self, values: np.ndarray, capped: bool = False):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be a 2-D (level, state) array")
        self.values = values
        self.max_level = values.shape[0]  # L
        self.state_count = values.shape[1]
        self.capped = capped
        self.cap_hit = False

    def lookup(self, a: int, x: int) -> float:
        if a < 0:
            return np.inf
        if a >= self.max_level:
            return 0.0
        if x >= self.state_count:
            if not self.capped:
                raise IndexError(f"state {x} out of range")
            self.cap_hit = True
            x = self.state_count - 1
        return float(self.values[a, x])

    def monotone_violations(self, tol: float = 0.0) -> list[tuple[int, int]]:
        """Pairs ``(a, x)`` where ``W(a+1, x) > W(a, x) + tol``.

        A table built from a fully indexable project has none.
        """
        out = []
        for x in range(self.state_count):
            col = self.values[:, x]
            for a in range(len(col) - 1):
                if col[a + 1] > col[a] + tol:
                    out.append((a, x))
        return out


@dataclass(frozen=True)
class PolicyTable:
    """Resource level per state, ``0 <= u(x) <= L``."""

    levels: np.ndarray
    monotone: bool | None = None

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=int)
        object.__setattr__(self, "levels", lv)
        if lv.min(initial=0) < 0:
            raise ValueError("levels must be nonnegative")
        if self.monotone and np.any(np.diff(lv) < 0):
            raise ValueError("policy flagged monotone but levels decrease")

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, x: int) -> int:
        return int(self.levels[x])


def greedy_action(
    tables: Sequence[IndexTable],
    state: Sequence[int],
    system: SystemSpec,
) -> tuple[int, ...]:
    """Build the greedy index action for ``state``.

    Starting from the zero allocation, repeatedly raise the level of
    the project with the largest current index, provided the raised
    allocation still fits the resource budget.  Stops when no raise is
    feasible or when every remaining index is exactly zero (raising a
    zero-index level is payoff-neutral).  Ties go to the lowest
    project position, which keeps the construction deterministic.
    """
    K = len(system.projects)
    if len(tables) != K or len(state) != K:
        raise ValueError("tables/state/projects length mismatch")
    for k, (t, p) in enumerate(zip(tables, system.projects)):
        if t.max_level != p.max_level:
            raise ValueError(f"project {k}: table has {t.max_level} levels, "
                             f"spec has {p.max_level}")
        if not (0 <= state[k] < p.state_count) and not t.capped:
            raise ValueError(f"project {k}: state {state[k]} out of range")

    a = [0] * K
    consumed = [system.projects[k].consumption(0, state[k]) for k in range(K)]
    R = system.resource_rate
    while True:
        best_k, best_w = -1, 0.0
        for k in range(K):
            if a[k] >= system.projects[k].max_level:
                continue
            w = tables[k].lookup(a[k], state[k])
            if w > best_w:
                best_k, best_w = k, w
        if best_k < 0:  # every candidate index is zero
            break
        r_new = system.projects[best_k].consumption(a[best_k] + 1, state[best_k])
        total = sum(consumed) - consumed[best_k] + r_new
        if total > R:
            break
        a[best_k] += 1
        consumed[best_k] = r_new
    return tuple(a)


def lagrange_action(
    tables: Sequence[IndexTable],
    state: Sequence[int],
    multiplier: float,
) -> tuple[int, ...]:
    """Action of the relaxed problem at resource charge ``multiplier``.

    Each project takes the level ``a`` with ``W(a-1, x) > multiplier
    >= W(a, x)`` under the extended conventions.  No resource budget
    is applied; the result can be inadmissible for the original
    problem.
    """
    if multiplier < 0:
        raise ValueError("multiplier must be nonnegative")
    action = []
    for t, x in zip(tables, state):
        a = 0
        while t.lookup(a, x) > multiplier:
            a += 1
        action.append(a)
    return tuple(action)


@dataclass
class IndexabilityReport:
    passed: bool
    # (W, W_next, level, state) where the nesting of Definition-style
    # threshold sets breaks between consecutive grid multipliers.
    violations: list[tuple[float, float, int, int]] = field(default_factory=list)

    def __bool__(self):
        return self.passed


def validate_full_indexability(
    policies: Mapping[float, Sequence[PolicyTable]],
) -> IndexabilityReport:
    """Check the nesting property over a family of optimal policies.

    ``policies`` maps multiplier values to one policy per project,
    each optimal at that multiplier (the caller guarantees
    optimality).  The family is fully indexable when, for every level
    ``a``, the set of states consuming at level ``a`` or below only
    grows with the multiplier, i.e. per-state levels never increase.
    """
    grid = sorted(policies)
    if not grid:
        raise ValueError("empty multiplier grid")
    violations = []
    for w_lo, w_hi in zip(grid, grid[1:]):
        for lo, hi in zip(policies[w_lo], policies[w_hi]):
            if len(lo) != len(hi):
                raise ValueError("policy length mismatch across grid")
            for x in range(len(lo)):
                if hi[x] > lo[x]:
                    # state x sits in the level-(hi[x]-1) threshold set
                    # at w_lo but leaves it at w_hi > w_lo
                    violations.append((w_lo, w_hi, hi[x] - 1, x))
    return IndexabilityReport(passed=not violations, violations=violations)


def index_from_policy_family(
    policies: Mapping[float, PolicyTable],
    exact: bool = False,
) -> IndexTable:
    """Recover an index table from a multiplier-indexed policy family.

    ``W(a, x)`` is the smallest grid multiplier at which the policy's
    level at ``x`` has dropped to ``a`` or below; ``+inf`` if it never
    does within the grid.  Exact when the grid consists of the
    family's breakpoints (``exact=True``); otherwise the result is
    grid-resolution-limited.
    """
    grid = sorted(policies)
    report = validate_full_indexability({w: [policies[w]] for w in grid})
    if not report:
        raise ValueError(f"policy family is not nested: {report.violations[:5]}")
    n_states = len(policies[grid[0]])
    max_level = max(int(np.max(policies[w].levels)) for w in grid)
    values = np.full((max_level, n_states), np.inf)
    for a in range(max_level):
        for x in range(n_states):
            for w in grid:
                if policies[w][x] <= a:
                    values[a, x] = w
                    break
    table = IndexTable(values)
    table.exact = exact
    return table
