"""Exact segmentation design by column-and-constraint generation.

The master problem picks a segmentation (integer numerators on the 1/D grid
plus used-segment flags) of minimal segment count such that every attack
column generated so far, re-scaled to the candidate segmentation, overloads
at most K branches.  The sub-problem is the attack MILP against the master's
latest answer; its optimal attack becomes the next column.  Bounds: the
sub-problem value upper-bounds what the current design concedes, the master's
count lower-bounds what any design must concede.  The loop ends when they
meet.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from . import backend
from .adversary import (
    AdversaryParams,
    AttackInstance,
    AttackOutcome,
    add_physics_block,
    solve_worst_case_attack,
)
from .backend import BINARY, INTEGER, ModelSpec, SolveStatus
from .errors import MalformedColumn, SolverFailure
from .fleet import FleetModel, Segmentation, maximal_segmentation, minimal_segmentation
from .grid import GridCase, NetworkMatrices, build_network_matrices

log = logging.getLogger(__name__)

#: slack (MW) when checking a column against its source segmentation
_COLUMN_TOL_MW = 1e-4


@dataclass(frozen=True)
class AttackColumn:
    iteration: int
    attack: AttackInstance
    source: Segmentation  # segmentation the attack was optimal against


class DefenseStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITERATION_LIMIT = "iteration_limit"
    TIME_LIMIT = "time_limit"


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    segments_used: int
    mu_lower: int
    mu_upper: int
    runtime_s: float
    seg_digest: str

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "segments_used": self.segments_used,
            "mu_lower": self.mu_lower,
            "mu_upper": self.mu_upper,
            "runtime_s": self.runtime_s,
            "seg_digest": self.seg_digest,
        }


@dataclass
class DefenseResult:
    status: DefenseStatus
    segmentation: Segmentation
    segments_used: int
    lower_bound: int  # overloads every segmentation must concede (mu_lo)
    upper_bound: int  # verified worst case of the returned segmentation (mu_up)
    iterations: list[IterationRecord]
    runtime_s: float
    worst_case: AttackOutcome | None = None

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "segments_used": self.segments_used,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "runtime_s": self.runtime_s,
            "iterations": [it.to_dict() for it in self.iterations],
            "segmentation": self.segmentation.to_dict(),
        }


def seg_digest(seg: Segmentation) -> str:
    """Short stable digest of a segmentation up to segment relabeling."""
    raw = repr(seg.canonical_key()).encode()
    return hashlib.sha256(raw).hexdigest()[:12]


def _validate_column(fleet: FleetModel, params: AdversaryParams,
                     col: AttackColumn) -> None:
    hacked: dict[str, set[int]] = {}
    for (o, s), v in col.attack.h.items():
        if v:
            hacked.setdefault(o, set()).add(s)
    if sum(len(v) for v in hacked.values()) > params.hack_budget:
        raise MalformedColumn(
            f"column {col.iteration} hacks more segments than the budget allows"
        )
    ops = {o.id: o for o in fleet.operators}
    for (o, n), mw in col.attack.l_pos.items():
        if o not in ops or not ops[o].hackable:
            raise MalformedColumn(f"column {col.iteration} alters non-hackable {o!r}")
        cover = col.source.coverage(o, n, hacked.get(o, ()))
        bound = params.raise_bound_mw(ops[o].capacity.get(n, 0.0)) * cover
        if mw > bound + _COLUMN_TOL_MW:
            raise MalformedColumn(
                f"column {col.iteration}: raise at ({o}, {n}) is {mw:.6g} MW, "
                f"source segmentation only reaches {bound:.6g} MW"
            )
    for (o, n), mw in col.attack.l_neg.items():
        if o not in ops or not ops[o].hackable:
            raise MalformedColumn(f"column {col.iteration} alters non-hackable {o!r}")
        cover = col.source.coverage(o, n, hacked.get(o, ()))
        bound = params.shed_bound_mw(ops[o].capacity.get(n, 0.0)) * cover
        if mw > bound + _COLUMN_TOL_MW:
            raise MalformedColumn(
                f"column {col.iteration}: shed at ({o}, {n}) is {mw:.6g} MW, "
                f"source segmentation only reaches {bound:.6g} MW"
            )


def build_master(grid: GridCase, mats: NetworkMatrices, fleet: FleetModel,
                 dispatch: Mapping[str, float], fcr_gains: Mapping[str, float],
                 params: AdversaryParams, k: int,
                 columns: Sequence[AttackColumn]) -> tuple[ModelSpec, dict]:
    """Minimal-segment master with one physics copy per attack column.

    Columns are counted at the plain overload thresholds (no epsilon margin).
    Returns the model plus a decode map with the a/b variable names and the
    per-column indicator names.
    """
    for col in columns:
        _validate_column(fleet, params, col)
    d = fleet.discretization
    base = grid.base_mva
    model = ModelSpec("master")
    oidx = {o.id: i for i, o in enumerate(fleet.operators)}

    a_names: dict[tuple[str, str, int], str] = {}
    b_names: dict[tuple[str, int], str] = {}
    for o in fleet.operators:
        nseg = fleet.max_segments(o)
        for s in range(1, nseg + 1):
            b_names[(o.id, s)] = model.add_variable(f"b_o{oidx[o.id]}_s{s}", kind=BINARY)
        for n in o.capacity_buses():
            for s in range(1, nseg + 1):
                a_names[(o.id, n, s)] = model.add_variable(
                    f"a_o{oidx[o.id]}_n{n}_s{s}", kind=INTEGER, lower=0, upper=d)
    eta = model.add_variable("eta", lower=0.0, upper=float(k))

    for o in fleet.operators:
        nseg = fleet.max_segments(o)
        # every operator runs at least one control segment
        model.add_constraint(f"own_o{oidx[o.id]}", [(b_names[(o.id, 1)], 1.0)], "==", 1.0)
        # unused segments cannot hold capacity
        for n in o.capacity_buses():
            for s in range(1, nseg + 1):
                model.add_constraint(
                    f"link_o{oidx[o.id]}_n{n}_s{s}",
                    [(a_names[(o.id, n, s)], 1.0), (b_names[(o.id, s)], -float(d))],
                    "<=", 0.0)
            # capacity is fully assigned
            model.add_constraint(
                f"full_o{oidx[o.id]}_n{n}",
                [(a_names[(o.id, n, s)], 1.0) for s in range(1, nseg + 1)],
                "==", float(d))
        # used segments form a prefix (symmetry breaking)
        for s in range(2, nseg + 1):
            model.add_constraint(
                f"ord_o{oidx[o.id]}_s{s}",
                [(b_names[(o.id, s)], 1.0), (b_names[(o.id, s - 1)], -1.0)],
                "<=", 0.0)

    col_u: list[list[str]] = []
    for j, col in enumerate(columns):
        hacked: dict[str, set[int]] = {}
        for (o, s), v in col.attack.h.items():
            if v:
                hacked.setdefault(o, set()).add(s)
        lpos: dict[tuple[str, str], str] = {}
        lneg: dict[tuple[str, str], str] = {}
        # the fixed attack re-scaled by how much of it the candidate still reaches
        for (o, n), mw in sorted(col.attack.l_pos.items()):
            if mw <= 0.0:
                continue
            name = model.add_variable(f"lp_c{j}_o{oidx[o]}_n{n}",
                                      lower=0.0, upper=mw / base)
            lpos[(o, n)] = name
            terms: list[tuple[str, float]] = [(name, 1.0)]
            for s in sorted(hacked.get(o, ())):
                terms.append((a_names[(o, n, s)], -(mw / base) / d))
            model.add_constraint(f"scale_p_c{j}_o{oidx[o]}_n{n}", terms, "==", 0.0)
        for (o, n), mw in sorted(col.attack.l_neg.items()):
            if mw <= 0.0:
                continue
            name = model.add_variable(f"ln_c{j}_o{oidx[o]}_n{n}",
                                      lower=0.0, upper=mw / base)
            lneg[(o, n)] = name
            terms = [(name, 1.0)]
            for s in sorted(hacked.get(o, ())):
                terms.append((a_names[(o, n, s)], -(mw / base) / d))
            model.add_constraint(f"scale_n_c{j}_o{oidx[o]}_n{n}", terms, "==", 0.0)

        names = add_physics_block(model, f"_c{j}", grid, mats, fleet, dispatch,
                                  fcr_gains, params, epsilon=0.0, lpos=lpos, lneg=lneg)
        u_names = [names["u_pos"][l.id] for l in grid.branches]
        u_names += [names["u_neg"][l.id] for l in grid.branches]
        model.add_constraint(
            f"count_c{j}", [(u, 1.0) for u in u_names] + [(eta, -1.0)], "<=", 0.0)
        col_u.append(u_names)

    model.set_objective("min", [(name, 1.0) for name in b_names.values()])
    decode = {"a": a_names, "b": b_names, "eta": eta, "col_u": col_u}
    return model, decode


def _decode_master(fleet: FleetModel, decode: dict,
                   values: Mapping[str, float]) -> tuple[Segmentation, int]:
    assignments = {}
    for key, name in decode["a"].items():
        num = int(values[name])
        if num:
            assignments[key] = num
    used = {}
    for key, name in decode["b"].items():
        if int(values[name]):
            used[key] = True
    seg = Segmentation(fleet.discretization, assignments, used)
    # the count the master actually concedes, not the solver's slack eta value
    eta_val = 0
    for u_names in decode["col_u"]:
        eta_val = max(eta_val, int(round(sum(values[u] for u in u_names))))
    return seg, eta_val


def run_ccg(grid: GridCase, fleet: FleetModel, dispatch: Mapping[str, float],
            fcr_gains: Mapping[str, float], params: AdversaryParams, k: int,
            *, gap: float = backend.DEFAULT_GAP, time_limit: float | None = None,
            max_iterations: int | None = None,
            mats: NetworkMatrices | None = None) -> DefenseResult:
    """Minimal segmentation whose worst-case attack overloads at most k branches.

    Requires params.epsilon > 0: the sub-problem counts flows strictly above
    the thresholds so that its verdict cannot disagree with the master about
    a flow sitting exactly on a threshold.
    """
    if params.epsilon <= 0.0:
        raise ValueError("run_ccg needs params.epsilon > 0")
    if k < 0:
        raise ValueError("k must be >= 0")
    t_start = time.perf_counter()
    deadline = None if time_limit is None else t_start + time_limit

    def remaining() -> float | None:
        if deadline is None:
            return None
        return max(0.1, deadline - time.perf_counter())

    if mats is None:
        mats = build_network_matrices(grid)
    n_branches = len(grid.branches)

    # floor: not even the finest split can concede less than this
    finest = maximal_segmentation(fleet)
    sp_floor = solve_worst_case_attack(grid, mats, fleet, finest, dispatch,
                                       fcr_gains, params, gap=gap,
                                       time_limit=remaining())
    mu_lo = sp_floor.overload_count
    trace: list[IterationRecord] = []
    if mu_lo > k:
        log.info("design infeasible: finest split still concedes %d > %d", mu_lo, k)
        return DefenseResult(
            status=DefenseStatus.INFEASIBLE,
            segmentation=finest,
            segments_used=finest.segments_used_count(),
            lower_bound=mu_lo,
            upper_bound=n_branches,
            iterations=trace,
            runtime_s=time.perf_counter() - t_start,
            worst_case=sp_floor,
        )

    prev = minimal_segmentation(fleet)  # a_0
    cur = prev
    mu_up = n_branches
    trace.append(IterationRecord(0, prev.segments_used_count(), mu_lo, mu_up,
                                 time.perf_counter() - t_start, seg_digest(prev)))
    columns: list[AttackColumn] = []
    best_verified: tuple[Segmentation, AttackOutcome] | None = None
    i = 0

    while mu_up > mu_lo:
        i += 1
        if max_iterations is not None and i > max_iterations:
            return _limit_result(DefenseStatus.ITERATION_LIMIT, best_verified, cur,
                                 mu_lo, mu_up, trace, t_start)
        t_iter = time.perf_counter()
        sp = solve_worst_case_attack(grid, mats, fleet, prev, dispatch, fcr_gains,
                                     params, gap=gap, time_limit=remaining())
        if sp.solve_status != SolveStatus.OPTIMAL:
            return _limit_result(DefenseStatus.TIME_LIMIT, best_verified, cur,
                                 mu_lo, mu_up, trace, t_start)
        mu_up = sp.overload_count
        if mu_up <= k:
            best_verified = (prev, sp)
        columns.append(AttackColumn(iteration=i, attack=sp.attack, source=prev))

        master, decode = build_master(grid, mats, fleet, dispatch, fcr_gains,
                                      params, k, columns)
        res = backend.solve(master, gap=gap, time_limit=remaining())
        if res.status == SolveStatus.INFEASIBLE:
            # cannot happen when the finest split passes the floor check, unless a
            # column's flow sits inside the (threshold, threshold*(1+eps)) window
            raise SolverFailure(
                "master infeasible although the finest split meets the target; "
                "a flow sits exactly in the epsilon window, rerun with smaller epsilon"
            )
        if res.status != SolveStatus.OPTIMAL or res.values is None:
            return _limit_result(DefenseStatus.TIME_LIMIT, best_verified, cur,
                                 mu_lo, mu_up, trace, t_start)
        cur, mu_lo = _decode_master(fleet, decode, res.values)
        trace.append(IterationRecord(i, cur.segments_used_count(), mu_lo, mu_up,
                                     time.perf_counter() - t_iter, seg_digest(cur)))
        prev = cur  # master's answer is the next candidate to probe

    # mu_up <= mu_lo: the candidate probed last is verified safe and its count
    # matches the master's floor, hence optimal
    if i == 0:
        final, wc = prev, None
    else:
        final, wc = columns[-1].source, (best_verified[1] if best_verified else None)
    return DefenseResult(
        status=DefenseStatus.OPTIMAL,
        segmentation=final,
        segments_used=final.segments_used_count(),
        lower_bound=mu_lo,
        upper_bound=mu_up,
        iterations=trace,
        runtime_s=time.perf_counter() - t_start,
        worst_case=wc,
    )


def _limit_result(status: DefenseStatus,
                  best_verified: tuple[Segmentation, AttackOutcome] | None,
                  cur: Segmentation, mu_lo: int, mu_up: int,
                  trace: list[IterationRecord], t_start: float) -> DefenseResult:
    if best_verified is not None:
        seg, wc = best_verified
        upper = wc.overload_count
    else:
        seg, wc, upper = cur, None, mu_up
    return DefenseResult(
        status=status,
        segmentation=seg,
        segments_used=seg.segments_used_count(),
        lower_bound=mu_lo,
        upper_bound=upper,
        iterations=trace,
        runtime_s=time.perf_counter() - t_start,
        worst_case=wc,
    )
