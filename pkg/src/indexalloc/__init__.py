"""Index policies for divisible-resource allocation across projects."""

from .core import (
    IndexTable,
    IndexabilityReport,
    PolicyTable,
    ProjectSpec,
    SystemSpec,
    greedy_action,
    index_from_policy_family,
    lagrange_action,
    validate_full_indexability,
)
from .station import (
    BreakpointSequence,
    StationModel,
    check_assumption1,
    compute_breakpoints,
    delta_v_profile,
    first_passage_stats,
    initial_breakpoint,
    station_indices,
)
from .plates import (
    AssetBreakpoints,
    AssetModel,
    asset_breakpoints,
    asset_first_passage,
    asset_indices,
    myopic_action,
    solve_Q_asset,
    uniformize_asset,
)
from .mdp import (
    best_static,
    build_asset_q,
    build_joint,
    build_station_q,
    evaluate_policy,
    percentage_excess,
    policy_iteration,
    relative_value_iteration,
)

__version__ = "0.1.0"
