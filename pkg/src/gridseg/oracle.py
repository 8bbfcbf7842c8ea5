"""Exhaustive cross-checks for the optimization models.

Everything here trades scale for independence: plain enumeration plus the
numpy replay path, no MILP machinery shared with the code under test.  Used
by the test-suite to pin down expected values on instances small enough to
enumerate, and usable interactively for the same purpose.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .adversary import AdversaryParams, AttackInstance, AttackOutcome, replay_attack
from .errors import TooLarge
from .fleet import FleetModel, Segmentation
from .grid import GridCase, NetworkMatrices


def _compositions(total: int, parts: int) -> Iterable[tuple[int, ...]]:
    """All ordered splits of `total` into `parts` non-negative integers."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _operator_layouts(buses: Sequence[str], d: int, max_segments: int,
                      cap: int) -> list[tuple[tuple[int, ...], ...]]:
    """Distinct per-operator assignments up to segment relabeling.

    Each layout is a tuple of segment columns; a column gives one numerator
    per bus (bus order fixed by `buses`), all-zero columns dropped.  Ordered
    enumeration is deduplicated through a sorted canonical form.
    """
    if not buses:
        return [()]
    nseg = max(1, min(max_segments, d * len(buses)))
    ordered = math.comb(d + nseg - 1, nseg - 1) ** len(buses)
    if ordered > cap:
        raise TooLarge(f"{ordered} ordered assignments exceed the cap {cap}")
    per_bus = list(_compositions(d, nseg))
    seen: set[tuple[tuple[int, ...], ...]] = set()
    out: list[tuple[tuple[int, ...], ...]] = []
    for combo in itertools.product(per_bus, repeat=len(buses)):
        # combo[i][s] = numerator of bus i on segment s; canonicalize by columns
        columns = tuple(sorted(
            (tuple(combo[i][s] for i in range(len(buses)))
             for s in range(nseg)),
            reverse=True,
        ))
        columns = tuple(c for c in columns if any(c))
        if columns not in seen:
            seen.add(columns)
            out.append(columns)
    return out


def enumerate_segmentations(fleet: FleetModel, *, cap: int = 1_000_000) -> list[Segmentation]:
    """Every distinct segmentation of the fleet on its 1/D grid.

    Distinct means up to relabeling of each operator's segments; the returned
    objects use prefix labels 1..k.  Raises TooLarge before materializing
    anything if the ordered search space exceeds `cap`.
    """
    d = fleet.discretization
    per_op: list[list[tuple[tuple[int, ...], ...]]] = []
    total = 1
    for o in fleet.operators:
        layouts = _operator_layouts(o.capacity_buses(), d, fleet.max_segments(o), cap)
        per_op.append(layouts)
        total *= max(1, len(layouts))
        if total > cap:
            raise TooLarge(f"{total}+ combined segmentations exceed the cap {cap}")
    out: list[Segmentation] = []
    for combo in itertools.product(*per_op):
        assignments: dict[tuple[str, str, int], int] = {}
        used: dict[tuple[str, int], bool] = {}
        for o, columns in zip(fleet.operators, combo):
            buses = o.capacity_buses()
            used[(o.id, 1)] = True  # every operator runs at least one segment
            for s, col in enumerate(columns, start=1):
                used[(o.id, s)] = True
                for i, num in enumerate(col):
                    if num:
                        assignments[(o.id, buses[i], s)] = num
        out.append(Segmentation(d, assignments, used))
    return out


def _lattice(levels: int, upper: float) -> list[float]:
    if upper <= 0.0:
        return [0.0]
    return [upper * i / (levels - 1) for i in range(levels)]


def lattice_attack_search(grid: GridCase, mats: NetworkMatrices, fleet: FleetModel,
                          seg: Segmentation, dispatch: Mapping[str, float],
                          fcr_gains: Mapping[str, float], params: AdversaryParams,
                          *, levels: int = 3, cap: int = 200_000,
                          epsilon: float | None = None) -> AttackOutcome:
    """Best attack found on a grid of alteration levels; a lower bound.

    Enumerates every hacked-segment subset within budget and, per subset, all
    combinations of per-(operator, bus) alterations drawn from `levels`
    evenly spaced points between zero and the reachable bound.  Combinations
    breaking the net-alteration cap are projected back by scaling one side.
    Every candidate goes through the replay path, so the best count found is
    a valid lower bound on the attack MILP's optimum.
    """
    if levels < 2:
        raise ValueError("levels must be >= 2")
    base = grid.base_mva
    ops = {o.id: o for o in fleet.operators}
    hackable = [(o.id, s) for o in fleet.operators if o.hackable
                for s in seg.used_segments(o.id)]

    subsets: list[tuple[tuple[str, int], ...]] = []
    for r in range(min(params.hack_budget, len(hackable)) + 1):
        subsets.extend(itertools.combinations(hackable, r))

    # size guard before any work: combinations per subset times subsets
    worst_pairs = sum(1 for o in fleet.operators if o.hackable
                      for _ in o.capacity_buses())
    est = len(subsets) * (levels ** (2 * worst_pairs))
    if est > cap:
        raise TooLarge(f"~{est} lattice candidates exceed the cap {cap}")

    best: AttackOutcome | None = None
    cap_mw = params.laa_max_mw
    for subset in subsets:
        hacked_by_op: dict[str, set[int]] = {}
        for o, s in subset:
            hacked_by_op.setdefault(o, set()).add(s)
        h = {key: int(key in subset) for key in hackable}
        pairs: list[tuple[str, str, float, float]] = []
        for o in fleet.operators:
            if not o.hackable:
                continue
            for n in o.capacity_buses():
                cover = seg.coverage(o.id, n, hacked_by_op.get(o.id, ()))
                pairs.append((
                    o.id, n,
                    params.raise_bound_mw(o.capacity[n]) * cover,
                    params.shed_bound_mw(o.capacity[n]) * cover,
                ))
        pos_axes = [_lattice(levels, ub) for _, _, ub, _ in pairs]
        neg_axes = [_lattice(levels, ub) for _, _, _, ub in pairs]
        for pos in itertools.product(*pos_axes):
            for neg in itertools.product(*neg_axes):
                p, nsum = sum(pos), sum(neg)
                net = p - nsum
                if net > cap_mw and p > 0:
                    t = (cap_mw + nsum) / p
                    pos = tuple(v * t for v in pos)
                elif net < -cap_mw and nsum > 0:
                    t = (p + cap_mw) / nsum
                    neg = tuple(v * t for v in neg)
                attack = AttackInstance(
                    h=h,
                    l_pos={(o, n): v for (o, n, _, _), v in zip(pairs, pos) if v > 0},
                    l_neg={(o, n): v for (o, n, _, _), v in zip(pairs, neg) if v > 0},
                )
                out = replay_attack(grid, mats, fleet, dispatch, fcr_gains, params,
                                    attack, epsilon=epsilon)
                if best is None or out.overload_count > best.overload_count:
                    best = out
    assert best is not None  # the empty subset always contributes one candidate
    return best


@dataclass
class BruteForceResult:
    feasible: bool
    segments_used: int | None
    segmentation: Segmentation | None
    worst_case: AttackOutcome | None
    candidates: int


def brute_force_defense(grid: GridCase, mats: NetworkMatrices, fleet: FleetModel,
                        dispatch: Mapping[str, float], fcr_gains: Mapping[str, float],
                        params: AdversaryParams, k: int, *,
                        cap: int = 100_000, gap: float = 1e-6,
                        solve_fn=None) -> BruteForceResult:
    """Minimal safe segmentation by trying every one of them.

    Inner evaluation defaults to the attack MILP (epsilon from params) so the
    notion of "safe" matches the design loop exactly; pass solve_fn to swap
    in another evaluator with the same signature.
    """
    if solve_fn is None:
        from .adversary import solve_worst_case_attack

        def solve_fn(segmentation):
            return solve_worst_case_attack(grid, mats, fleet, segmentation,
                                           dispatch, fcr_gains, params, gap=gap)

    candidates = enumerate_segmentations(fleet, cap=cap)
    # cheapest first, deterministic within equal counts by enumeration order
    candidates.sort(key=lambda s: s.segments_used_count())
    for seg in candidates:
        out = solve_fn(seg)
        if out.overload_count <= k:
            return BruteForceResult(True, seg.segments_used_count(), seg, out,
                                    len(candidates))
    return BruteForceResult(False, None, None, None, len(candidates))
