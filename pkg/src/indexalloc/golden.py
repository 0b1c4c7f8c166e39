"""Built-in regression fixtures with hand-verified solutions.

The centerpiece is an 11-state asset whose optimal policies are not
monotone in state; its seven policy-change multipliers and the policy
on every interval between them are known to five decimal places, which
makes it a sharp end-to-end check of the charged-problem solver and
the breakpoint sweep.  Two smaller fixtures cover the greedy/relaxed
action constructors on a hand-built pair of index columns and the
closed-form initial breakpoint of a station.
"""
from __future__ import annotations

import numpy as np

from .core import IndexTable, ProjectSpec, SystemSpec, greedy_action, lagrange_action
from .plates import AssetModel, asset_breakpoints
from .station import StationModel, initial_breakpoint

__all__ = [
    "reference_asset",
    "REFERENCE_BREAKPOINTS",
    "REFERENCE_POLICIES",
    "check_reference_asset",
    "check_action_constructors",
    "check_initial_breakpoint",
    "run_all",
]

_PHI = 1.30738
_ETA = 1.16393

#: multipliers at which the reference asset's optimal policy changes,
#: descending; each is quoted to the five decimals it was verified to
REFERENCE_BREAKPOINTS = (7.37491, 7.07632, 5.32243, 5.21572, 4.98366,
                         3.84063, 3.48775)

#: optimal levels for states 0..10 on the interval ABOVE each multiplier
REFERENCE_POLICIES = (
    (3, 4, 4, 4, 3, 3, 2, 2, 2, 1, 0),
    (2, 4, 4, 4, 3, 3, 2, 2, 2, 1, 0),
    (2, 4, 4, 3, 3, 3, 2, 2, 2, 1, 0),
    (2, 4, 3, 3, 3, 3, 2, 2, 2, 1, 0),
    (2, 3, 3, 3, 3, 3, 2, 2, 2, 1, 0),
    (2, 3, 3, 3, 3, 2, 2, 2, 2, 1, 0),
    (1, 3, 3, 3, 3, 2, 2, 2, 2, 1, 0),
)


def reference_asset() -> AssetModel:
    """The non-monotone 11-state asset behind the fixtures above."""
    return AssetModel.separable(
        _PHI,
        lambda n: 1.0,
        lambda n: _ETA,
        lambda n: n / (n + 1),
        max_level=5,
        top_state=10,
    )


def check_reference_asset(tol: float = 1e-4) -> list[str]:
    """Breakpoint sweep vs the seven known multipliers and policies.

    Each known multiplier must match a computed breakpoint within
    ``tol``, and the computed policy on the interval just above it
    must equal the known row exactly.  Returns failure messages.
    """
    failures = []
    sweep = asset_breakpoints(reference_asset())
    computed = np.asarray(sweep.breakpoints)
    for h_ref, levels_ref in zip(REFERENCE_BREAKPOINTS, REFERENCE_POLICIES):
        gaps = np.abs(computed - h_ref)
        m = int(np.argmin(gaps))
        if gaps[m] > tol:
            failures.append(f"no breakpoint within {tol} of {h_ref} "
                            f"(closest {computed[m]:.6f})")
            continue
        # the row policy is optimal on the interval above its multiplier
        got = tuple(int(x) for x in sweep.policy_at(computed[m] * 1.0000001).levels)
        if got != levels_ref:
            failures.append(f"policy above {h_ref}: got {got}, want {levels_ref}")
    return failures


def check_action_constructors() -> list[str]:
    """Greedy vs relaxed actions on a hand-built pair of index columns.

    Project 1 at its state has indices (10, 8, 3, 2.5, 2) for levels
    0..4, project 2 has (9, 7, 6, 5, 1).  With 5 units available the
    five largest indices split 2/3, so greedy picks (2, 3).  At charge
    4 the relaxed action is (2, 4): total 6, inadmissible for the
    budget.
    """
    failures = []
    t1 = IndexTable(np.array([[10.0], [8.0], [3.0], [2.5], [2.0]]))
    t2 = IndexTable(np.array([[9.0], [7.0], [6.0], [5.0], [1.0]]))
    system = SystemSpec(
        projects=(ProjectSpec(state_count=1, max_level=5),
                  ProjectSpec(state_count=1, max_level=5)),
        resource_rate=5,
    )
    got = greedy_action([t1, t2], (0, 0), system)
    if got != (2, 3):
        failures.append(f"greedy action: got {got}, want (2, 3)")
    relaxed = lagrange_action([t1, t2], (0, 0), 4.0)
    if relaxed != (2, 4):
        failures.append(f"relaxed action at charge 4: got {relaxed}, want (2, 4)")
    if sum(relaxed) <= system.resource_rate:
        failures.append("relaxed action unexpectedly admissible")
    return failures


def check_initial_breakpoint() -> list[str]:
    """Closed-form j1 on a 2-server station: lam=1, mu=(0,2,3) gives 2/3."""
    st = StationModel(arrival_rate=1.0, mu=np.array([0.0, 2.0, 3.0]))
    j1 = initial_breakpoint(st)
    if abs(j1 - 2.0 / 3.0) > 1e-12:
        return [f"initial breakpoint: got {j1}, want 2/3"]
    return []


def run_all() -> list[tuple[str, list[str]]]:
    """All fixture checks as (name, failure messages) pairs."""
    return [
        ("reference-asset-breakpoints", check_reference_asset()),
        ("action-constructors", check_action_constructors()),
        ("initial-breakpoint", check_initial_breakpoint()),
    ]
