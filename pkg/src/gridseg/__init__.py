"""Worst-case charging-fleet attacks on DC grids and preventive segmentation."""

from .adversary import (
    AdversaryParams,
    AttackInstance,
    AttackOutcome,
    build_adversary_model,
    replay_attack,
    solve_worst_case_attack,
)
from .backend import ModelSpec, SolveResult, SolveStatus, solve
from .ccg import AttackColumn, DefenseResult, DefenseStatus, build_master, run_ccg
from .errors import (
    BackendUnavailable,
    GridsegError,
    GridTooCoarse,
    InfeasibleDispatch,
    MalformedColumn,
    MalformedModel,
    ParseError,
    SegmentationMismatch,
    SingularNetwork,
    SolutionIntegrityError,
    SolverFailure,
    TooLarge,
    UnbalancedInjections,
    ZeroFcr,
)
from .fleet import (
    FleetModel,
    Operator,
    Segmentation,
    Violation,
    build_fleet,
    load_fleet_csv,
    load_segmentation_json,
    maximal_segmentation,
    minimal_segmentation,
    save_segmentation_json,
    validate_segmentation,
)
from .grid import (
    Branch,
    Bus,
    Generator,
    GridCase,
    NetworkMatrices,
    build_network_matrices,
    dc_power_flow,
    dispatch_flows,
    economic_dispatch,
    electrical_distances,
    fcr_gains_from_dispatch,
    load_grid_json,
    save_grid_json,
)
from .heuristics import (
    HeuristicResult,
    HeuristicSpec,
    balanced_clustering,
    design_heuristic,
    iterative_informed,
    uni_thres,
)
from .oracle import (
    BruteForceResult,
    brute_force_defense,
    enumerate_segmentations,
    lattice_attack_search,
)

__version__ = "0.1.0"

import types as _types

__all__ = sorted(
    name for name, value in globals().items()
    if not name.startswith("_") and not isinstance(value, _types.ModuleType)
)
