"""Heuristic segmentation schemes.

Two one-shot schemes (capacity threshold, balanced electrical clustering) and
their iterative counterparts that only refine segments the worst-case attack
actually used.  All of them return segmentations on the fleet's 1/D grid, so
results stay directly comparable with the exact design.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import backend
from .adversary import AdversaryParams, AttackOutcome, solve_worst_case_attack
from .backend import BINARY, ModelSpec, SolveStatus
from .errors import GridTooCoarse, SolverFailure
from .fleet import FleetModel, Operator, Segmentation, minimal_segmentation
from .grid import GridCase, NetworkMatrices, build_network_matrices, electrical_distances

log = logging.getLogger(__name__)

SCHEMES = ("uni_thres", "clus_seg", "itin_thres", "itin_clus")


@dataclass(frozen=True)
class HeuristicSpec:
    scheme: str
    cs_mw: float | None = None  # capacity per segment for the threshold schemes
    ks: int | None = None  # segments per operator / split arity
    lam: float = 1e5  # weight of the size-balance term in clustering
    max_iterations: int = 10

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if self.scheme == "uni_thres":
            if self.cs_mw is None or self.cs_mw <= 0:
                raise ValueError("uni_thres needs cs_mw > 0")
        if self.scheme in ("clus_seg", "itin_thres", "itin_clus"):
            if self.ks is None or self.ks < 1:
                raise ValueError(f"{self.scheme} needs ks >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class HeuristicIteration:
    iteration: int
    segments_used: int
    overload_count: int
    hacked: tuple[tuple[str, int], ...]


@dataclass
class HeuristicResult:
    segmentation: Segmentation
    segments_used: int
    converged: bool
    iterations: list[HeuristicIteration]
    worst_case: AttackOutcome | None = None

    def to_dict(self) -> dict:
        return {
            "segments_used": self.segments_used,
            "converged": self.converged,
            "iterations": [
                {
                    "iteration": it.iteration,
                    "segments_used": it.segments_used,
                    "overload_count": it.overload_count,
                    "hacked": [list(h) for h in it.hacked],
                }
                for it in self.iterations
            ],
            "segmentation": self.segmentation.to_dict(),
        }


def _spread(amount: int, parts: int) -> list[int]:
    """amount split into `parts` integers, as even as possible, big ones first."""
    q, r = divmod(amount, parts)
    return [q + 1 if p < r else q for p in range(parts)]


def uni_thres(fleet: FleetModel, cs_mw: float) -> Segmentation:
    """One segment per cs_mw of operator capacity, buses spread uniformly.

    Each operator gets ceil(total / cs_mw) segments and every bus's capacity
    is dealt across all of them as evenly as the 1/D grid permits.
    """
    if cs_mw <= 0:
        raise ValueError("cs_mw must be > 0")
    d = fleet.discretization
    assignments: dict[tuple[str, str, int], int] = {}
    used: dict[tuple[str, int], bool] = {}
    for o in fleet.operators:
        total = o.total_capacity()
        m = max(1, math.ceil(total / cs_mw - 1e-12))
        if m > 1 and d < m:
            raise GridTooCoarse(
                f"operator {o.id}: {m} segments requested but the 1/{d} grid "
                f"cannot spread a bus across more than {d} of them"
            )
        if m > fleet.max_segments(o):
            raise GridTooCoarse(
                f"operator {o.id}: {m} segments exceed the limit {fleet.max_segments(o)}"
            )
        for s in range(1, m + 1):
            used[(o.id, s)] = True
        for n in o.capacity_buses():
            for s, num in enumerate(_spread(d, m), start=1):
                if num:
                    assignments[(o.id, n, s)] = num
    return Segmentation(d, assignments, used)


def _cluster_buses(bus_ids: Sequence[str], weights: Mapping[str, float],
                   dist: Mapping[tuple[str, str], float], ks: int, lam: float,
                   *, gap: float, time_limit: float | None,
                   tag: str = "") -> list[list[str]]:
    """Partition buses into <= ks groups, electrically tight and size-balanced.

    Minimizes the summed intra-group distance plus lam times the largest
    deviation of a group's weight from the even split.  Exact MILP with the
    standard product linearization; groups come back ordered by their first
    bus and without empty entries.
    """
    if len(bus_ids) <= 1 or ks == 1:
        return [list(bus_ids)] if bus_ids else []
    ks = min(ks, len(bus_ids))
    model = ModelSpec(f"clustering{tag}")
    for n in bus_ids:
        for c in range(ks):
            model.add_variable(f"x_{n}_c{c}", kind=BINARY)
    kappa = model.add_variable("kappa", lower=0.0, upper=math.inf)
    obj: list[tuple[str, float]] = [(kappa, lam)]
    for i, n in enumerate(bus_ids):
        model.add_constraint(f"one_{n}", [(f"x_{n}_c{c}", 1.0) for c in range(ks)],
                             "==", 1.0)
        for kk, m_ in enumerate(bus_ids):
            if kk <= i:
                continue
            for c in range(ks):
                z = model.add_variable(f"z_{n}_{m_}_c{c}", lower=0.0, upper=1.0)
                model.add_constraint(
                    f"and_{n}_{m_}_c{c}",
                    [(z, 1.0), (f"x_{n}_c{c}", -1.0), (f"x_{m_}_c{c}", -1.0)],
                    ">=", -1.0)
                # both orientations of the pair contribute once each
                obj.append((z, 2.0 * dist[(n, m_)]))
    mean = sum(weights[n] for n in bus_ids) / ks
    for c in range(ks):
        terms = [(f"x_{n}_c{c}", weights[n]) for n in bus_ids]
        model.add_constraint(f"bal_hi_c{c}", terms + [(kappa, -1.0)], "<=", mean)
        model.add_constraint(f"bal_lo_c{c}", terms + [(kappa, 1.0)], ">=", mean)
    model.set_objective("min", obj)
    res = backend.solve(model, gap=gap, time_limit=time_limit)
    if res.values is None:
        raise SolverFailure(f"clustering solve ended with status {res.status}")
    groups: list[list[str]] = []
    for c in range(ks):
        members = [n for n in bus_ids if res.values[f"x_{n}_c{c}"] > 0.5]
        if members:
            groups.append(members)
    groups.sort(key=lambda g: bus_ids.index(g[0]))
    return groups


def balanced_clustering(grid: GridCase, mats: NetworkMatrices, fleet: FleetModel,
                        ks: int, lam: float = 1e5, *,
                        gap: float = backend.DEFAULT_GAP,
                        time_limit: float | None = None) -> Segmentation:
    """ks electrically-coherent, size-balanced segments per operator.

    Buses are atomic here: a bus's whole capacity lands in one segment, so an
    operator never gets more segments than it has capacity buses.
    """
    if ks < 1:
        raise ValueError("ks must be >= 1")
    d = fleet.discretization
    dist_m = electrical_distances(mats)
    bidx = {b: i for i, b in enumerate(mats.bus_ids)}
    assignments: dict[tuple[str, str, int], int] = {}
    used: dict[tuple[str, int], bool] = {}
    for oi, o in enumerate(fleet.operators):
        buses = o.capacity_buses()
        used[(o.id, 1)] = True
        if not buses:
            continue
        dist = {(n, m): float(dist_m[bidx[n], bidx[m]])
                for n in buses for m in buses}
        groups = _cluster_buses(buses, o.capacity, dist, ks, lam,
                                gap=gap, time_limit=time_limit, tag=f"_o{oi}")
        if len(groups) > fleet.max_segments(o):
            raise GridTooCoarse(
                f"operator {o.id}: clustering needs {len(groups)} segments, "
                f"limit is {fleet.max_segments(o)}")
        for s, members in enumerate(groups, start=1):
            used[(o.id, s)] = True
            for n in members:
                assignments[(o.id, n, s)] = d
    return Segmentation(d, assignments, used)


def _split_segmentation(fleet: FleetModel, seg: Segmentation,
                        hacked: Sequence[tuple[str, int]], ks: int,
                        scheme: str, dist_m: np.ndarray,
                        bus_index: Mapping[str, int], lam: float,
                        *, gap: float, time_limit: float | None) -> Segmentation:
    """Split every hacked segment into ks parts; all parts count as used.

    itin_thres deals each bus's numerator across the parts evenly; itin_clus
    groups the segment's buses electrically and moves whole per-bus shares.
    Segments of untouched operators are left alone; within a touched operator
    labels are re-packed into a prefix.
    """
    d = seg.d
    hacked_by_op: dict[str, set[int]] = {}
    for o, s in hacked:
        hacked_by_op.setdefault(o, set()).add(s)

    assignments: dict[tuple[str, str, int], int] = {}
    used: dict[tuple[str, int], bool] = {}
    for op in fleet.operators:
        o = op.id
        old_segments = seg.used_segments(o)
        if o not in hacked_by_op:
            for s in old_segments:
                used[(o, s)] = True
            for (oo, n, s), num in seg.assignments.items():
                if oo == o and num:
                    assignments[(o, n, s)] = num
            continue
        # expand hacked segments in place, keep the rest, then relabel
        pieces: list[dict[str, int]] = []  # per new segment: bus -> numerator
        for s in old_segments:
            content = {n: seg.numerator(o, n, s) for n in op.capacity_buses()
                       if seg.numerator(o, n, s)}
            if s not in hacked_by_op[o]:
                pieces.append(content)
                continue
            parts: list[dict[str, int]] = [dict() for _ in range(ks)]
            if scheme == "itin_thres":
                for n, num in sorted(content.items()):
                    for p, share in enumerate(_spread(num, ks)):
                        if share:
                            parts[p][n] = share
            else:  # itin_clus: whole per-bus shares move with their cluster
                members = sorted(content)
                dist = {(a, b): float(dist_m[bus_index[a], bus_index[b]])
                        for a in members for b in members}
                weights = {n: op.capacity[n] * content[n] / d for n in members}
                groups = _cluster_buses(members, weights, dist, ks, lam,
                                        gap=gap, time_limit=time_limit,
                                        tag=f"_split_{o}_{s}")
                for p, grp in enumerate(groups):
                    for n in grp:
                        parts[p][n] = content[n]
            pieces.extend(parts)
        if len(pieces) > fleet.max_segments(op):
            # at the segment limit splitting further is impossible; keep the
            # operator as it was rather than drop capacity
            log.warning("operator %s is at its segment limit; skipping its splits", o)
            pieces = [
                {n: seg.numerator(o, n, s) for n in op.capacity_buses()
                 if seg.numerator(o, n, s)}
                for s in old_segments
            ]
        for new_s, content in enumerate(pieces, start=1):
            used[(o, new_s)] = True
            for n, num in content.items():
                assignments[(o, n, new_s)] = num
    return Segmentation(d, assignments, used)


def iterative_informed(grid: GridCase, fleet: FleetModel,
                       dispatch: Mapping[str, float], fcr_gains: Mapping[str, float],
                       params: AdversaryParams, spec: HeuristicSpec, k: int = 1,
                       *, gap: float = backend.DEFAULT_GAP,
                       time_limit: float | None = None,
                       mats: NetworkMatrices | None = None) -> HeuristicResult:
    """Start minimal, split whatever the worst-case attack hacks, repeat.

    Stops as soon as the worst case concedes at most k overloads, or after
    max_iterations splits (converged=False then).  Needs params.epsilon > 0
    for the same threshold-tie reason as the exact design.
    """
    if spec.scheme not in ("itin_thres", "itin_clus"):
        raise ValueError(f"iterative_informed cannot run scheme {spec.scheme!r}")
    if params.epsilon <= 0.0:
        raise ValueError("iterative_informed needs params.epsilon > 0")
    assert spec.ks is not None
    if mats is None:
        mats = build_network_matrices(grid)
    dist_m = electrical_distances(mats)
    bidx = {b: i for i, b in enumerate(mats.bus_ids)}

    seg = minimal_segmentation(fleet)
    trace: list[HeuristicIteration] = []
    out: AttackOutcome | None = None
    for it in range(spec.max_iterations + 1):
        out = solve_worst_case_attack(grid, mats, fleet, seg, dispatch, fcr_gains,
                                      params, gap=gap, time_limit=time_limit)
        hacked = out.attack.hacked_segments()
        trace.append(HeuristicIteration(it, seg.segments_used_count(),
                                        out.overload_count, hacked))
        if out.overload_count <= k:
            return HeuristicResult(seg, seg.segments_used_count(), True, trace, out)
        if it == spec.max_iterations:
            break
        if not hacked:
            break  # overloads without any hack cannot be segmented away
        seg = _split_segmentation(fleet, seg, hacked, spec.ks, spec.scheme,
                                  dist_m, bidx, spec.lam,
                                  gap=gap, time_limit=time_limit)
    return HeuristicResult(seg, seg.segments_used_count(), False, trace, out)


def design_heuristic(grid: GridCase, fleet: FleetModel,
                     dispatch: Mapping[str, float], fcr_gains: Mapping[str, float],
                     params: AdversaryParams, spec: HeuristicSpec, k: int = 1,
                     *, gap: float = backend.DEFAULT_GAP,
                     time_limit: float | None = None,
                     mats: NetworkMatrices | None = None) -> HeuristicResult:
    """Run any scheme and report the result in one shape, evaluated at the end."""
    if mats is None:
        mats = build_network_matrices(grid)
    if spec.scheme == "uni_thres":
        assert spec.cs_mw is not None
        seg = uni_thres(fleet, spec.cs_mw)
    elif spec.scheme == "clus_seg":
        assert spec.ks is not None
        seg = balanced_clustering(grid, mats, fleet, spec.ks, spec.lam,
                                  gap=gap, time_limit=time_limit)
    else:
        return iterative_informed(grid, fleet, dispatch, fcr_gains, params, spec, k,
                                  gap=gap, time_limit=time_limit, mats=mats)
    out = solve_worst_case_attack(grid, mats, fleet, seg, dispatch, fcr_gains,
                                  params, gap=gap, time_limit=time_limit)
    trace = [HeuristicIteration(0, seg.segments_used_count(), out.overload_count,
                                out.attack.hacked_segments())]
    return HeuristicResult(seg, seg.segments_used_count(),
                           out.overload_count <= k, trace, out)
