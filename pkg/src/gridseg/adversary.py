"""Worst-case load-altering attack through compromised charging operators.

The adversary picks up to a budget of control segments to compromise, then
re-schedules the charging load reachable through them (raising it toward
installed capacity, or shedding / reversing it) to push branch flows over
their overload thresholds.  Grid response is DC plus a uniform
frequency-containment term that scales generator output by per-generator
gains.  The model is the mixed-integer program behind both the direct threat
assessment and the sub-problem of the segmentation design loop.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import backend
from .backend import BINARY, CONTINUOUS, ModelSpec, SolveStatus
from .errors import SolverFailure, ZeroFcr
from .fleet import FleetModel, Segmentation
from .grid import GridCase, NetworkMatrices, dc_power_flow

log = logging.getLogger(__name__)

#: slack (p.u.) when deciding whether a replayed flow reaches a threshold
REPLAY_EDGE_TOL = 1e-6


@dataclass(frozen=True)
class AdversaryParams:
    hack_budget: int
    coincidence: float  # fraction of installed capacity charging right now
    act_fraction: float = 1.0  # share of idle capacity that can be switched on
    v2g_fraction: float = 0.0  # extra shed headroom from vehicle-to-grid reversal
    laa_max_mw: float = 0.0  # cap on |net load alteration|, MW
    big_m: float = 100.0  # p.u., must dominate any |flow| - threshold excess
    epsilon: float = 1e-3  # relative threshold tightening for strict overloads

    def __post_init__(self):
        if self.hack_budget < 0 or self.hack_budget != int(self.hack_budget):
            raise ValueError("hack_budget must be a non-negative integer")
        if not 0.0 <= self.coincidence <= 1.0:
            raise ValueError("coincidence must lie in [0, 1]")
        if not 0.0 <= self.act_fraction <= 1.0:
            raise ValueError("act_fraction must lie in [0, 1]")
        if self.v2g_fraction < 0.0:
            raise ValueError("v2g_fraction must be >= 0")
        if self.laa_max_mw < 0.0:
            raise ValueError("laa_max_mw must be >= 0")
        if self.big_m <= 0.0:
            raise ValueError("big_m must be > 0")
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be >= 0")

    def raise_bound_mw(self, installed_mw: float) -> float:
        """Most additional charging load reachable at one (operator, bus)."""
        return installed_mw * (1.0 - self.coincidence) * self.act_fraction

    def shed_bound_mw(self, installed_mw: float) -> float:
        """Most sheddable (incl. reversed) load at one (operator, bus)."""
        return installed_mw * self.coincidence * (1.0 + self.v2g_fraction)


@dataclass(frozen=True)
class AttackInstance:
    """A concrete attack: which segments are hacked, and the load deltas (MW)."""

    h: Mapping[tuple[str, int], int]  # (operator, segment) -> 0/1
    l_pos: Mapping[tuple[str, str], float]  # (operator, bus) -> raised MW
    l_neg: Mapping[tuple[str, str], float]  # (operator, bus) -> shed MW

    def net_mw(self) -> float:
        return sum(self.l_pos.values()) - sum(self.l_neg.values())

    def hacked_segments(self) -> tuple[tuple[str, int], ...]:
        return tuple(sorted(k for k, v in self.h.items() if v))

    def to_dict(self) -> dict:
        return {
            "hacked_segments": [list(k) for k in self.hacked_segments()],
            "l_pos": [
                {"operator": o, "bus": n, "mw": v}
                for (o, n), v in sorted(self.l_pos.items()) if v
            ],
            "l_neg": [
                {"operator": o, "bus": n, "mw": v}
                for (o, n), v in sorted(self.l_neg.items()) if v
            ],
        }


@dataclass(frozen=True)
class AttackOutcome:
    attack: AttackInstance
    flows_mw: Mapping[str, float]  # branch id -> MW
    angles_rad: Mapping[str, float]  # bus id -> rad
    freq_dev: float  # net alteration over total gain, dimensionless
    u_pos: Mapping[str, int]
    u_neg: Mapping[str, int]
    overload_count: int
    solve_status: SolveStatus | None = None

    def overloaded_branches(self) -> tuple[str, ...]:
        return tuple(sorted(l for l in self.u_pos
                            if self.u_pos[l] or self.u_neg[l]))


def _gen_pu(grid: GridCase, values: Mapping[str, float]) -> dict[str, float]:
    missing = [g.id for g in grid.generators if g.id not in values]
    if missing:
        raise KeyError(f"missing per-generator values for {missing}")
    return {g.id: values[g.id] / grid.base_mva for g in grid.generators}


def add_physics_block(model: ModelSpec, tag: str, grid: GridCase,
                      mats: NetworkMatrices, fleet: FleetModel,
                      dispatch: Mapping[str, float], fcr_gains: Mapping[str, float],
                      params: AdversaryParams, *, epsilon: float,
                      lpos: Mapping[tuple[str, str], str],
                      lneg: Mapping[tuple[str, str], str]) -> dict:
    """Grid response to a load alteration, as rows of `model`.

    Adds flow/angle/frequency variables plus the overload indicator binaries
    for one attack copy named by `tag`.  lpos/lneg map (operator id, bus id)
    to the names of already-created alteration variables (absent key = zero).
    Thresholds are overload_threshold * (1 + epsilon).  Covers balance, DC
    flows, the frequency response, and the indicators; budget and magnitude
    caps (including the net alteration cap) are the attacker's own rows and
    live outside this block.  Returns the names of the created variables.
    """
    base = grid.base_mva
    bidx = grid.bus_index()
    pg = _gen_pu(grid, dispatch)
    kg = _gen_pu(grid, fcr_gains)
    sum_k = sum(kg.values())

    evcs_base = {b.id: 0.0 for b in grid.buses}
    for o in fleet.operators:
        for bus, mw in o.capacity.items():
            evcs_base[bus] += params.coincidence * mw / base

    names = {
        "flow": {l.id: f"f{tag}_l{j}" for j, l in enumerate(grid.branches)},
        "angle": {b.id: f"th{tag}_n{i}" for i, b in enumerate(grid.buses)},
        "freq": f"fD{tag}",
        "u_pos": {l.id: f"uP{tag}_l{j}" for j, l in enumerate(grid.branches)},
        "u_neg": {l.id: f"uN{tag}_l{j}" for j, l in enumerate(grid.branches)},
    }
    for l in grid.branches:
        model.add_variable(names["flow"][l.id], lower=-math.inf, upper=math.inf)
    for b in grid.buses:
        model.add_variable(names["angle"][b.id], lower=-math.inf, upper=math.inf)
    model.add_variable(names["freq"], lower=-math.inf, upper=math.inf)
    for l in grid.branches:
        model.add_variable(names["u_pos"][l.id], kind=BINARY)
        model.add_variable(names["u_neg"][l.id], kind=BINARY)

    if sum_k <= 0.0:
        if lpos or lneg:
            if params.laa_max_mw > 0.0:
                raise ZeroFcr(
                    "frequency gains sum to zero but a net load alteration is allowed"
                )
            # net alteration is pinned at zero, so no frequency response is needed
        model.add_constraint(f"fD_zero{tag}", [(names["freq"], 1.0)], "==", 0.0)

    # frequency settles where the gains absorb the net alteration
    freq_terms: list[tuple[str, float]] = [(names["freq"], sum_k)]
    for name in lpos.values():
        freq_terms.append((name, 1.0))
    for name in lneg.values():
        freq_terms.append((name, -1.0))
    model.add_constraint(f"freq{tag}", freq_terms, "==", 0.0)

    # nodal balance: generation (with frequency response) less loads equals export
    for i, b in enumerate(grid.buses):
        terms: list[tuple[str, float]] = []
        k_at = sum(kg[g.id] for g in grid.generators if g.bus == b.id)
        if k_at:
            terms.append((names["freq"], -k_at))
        rhs = b.base_load / base + evcs_base[b.id]
        rhs -= sum(pg[g.id] for g in grid.generators if g.bus == b.id)
        for o in fleet.operators:
            if (o.id, b.id) in lpos:
                terms.append((lpos[(o.id, b.id)], -1.0))
            if (o.id, b.id) in lneg:
                terms.append((lneg[(o.id, b.id)], 1.0))
        for j, l in enumerate(grid.branches):
            coef = mats.incidence[i, j]
            if coef:
                terms.append((names["flow"][l.id], -coef))
        model.add_constraint(f"bal{tag}_n{i}", terms, "==", rhs)

    # DC flow from angles, reference pinned
    for j, l in enumerate(grid.branches):
        model.add_constraint(
            f"dcf{tag}_l{j}",
            [(names["angle"][l.from_bus], l.susceptance),
             (names["angle"][l.to_bus], -l.susceptance),
             (names["flow"][l.id], -1.0)],
            "==", 0.0,
        )
    ref_id = mats.bus_ids[mats.reference_index]
    model.add_constraint(f"ref{tag}", [(names["angle"][ref_id], 1.0)], "==", 0.0)

    # big-M overload indicators, both flow directions
    m_pu = params.big_m
    for j, l in enumerate(grid.branches):
        thr = l.overload_threshold / base * (1.0 + epsilon)
        fv, up, un = names["flow"][l.id], names["u_pos"][l.id], names["u_neg"][l.id]
        model.add_constraint(f"ovp_hi{tag}_l{j}", [(fv, 1.0), (up, -m_pu)], "<=", thr)
        model.add_constraint(f"ovp_lo{tag}_l{j}", [(fv, 1.0), (up, -m_pu)], ">=", thr - m_pu)
        model.add_constraint(f"ovn_hi{tag}_l{j}", [(fv, -1.0), (un, -m_pu)], "<=", thr)
        model.add_constraint(f"ovn_lo{tag}_l{j}", [(fv, -1.0), (un, -m_pu)], ">=", thr - m_pu)
    return names


def _check_big_m(grid: GridCase, fleet: FleetModel, params: AdversaryParams) -> None:
    # crude upper estimate of any single flow: everything produced or consumed
    # anywhere would have to cross one branch
    base = grid.base_mva
    total = sum(g.p_max * g.availability for g in grid.generators)
    total += sum(abs(b.base_load) for b in grid.buses)
    total += fleet.total_capacity()
    if params.big_m < total / base:
        log.warning(
            "big_m=%.3g p.u. is below the crude flow bound %.3g p.u.; "
            "overload indicators may clip", params.big_m, total / base,
        )


def build_adversary_model(grid: GridCase, mats: NetworkMatrices, fleet: FleetModel,
                          seg: Segmentation, dispatch: Mapping[str, float],
                          fcr_gains: Mapping[str, float], params: AdversaryParams,
                          *, epsilon: float | None = None) -> tuple[ModelSpec, dict]:
    """Attack MILP against a fixed segmentation.

    dispatch must have been computed for the same loading this model assumes:
    bus base_load plus coincidence times the fleet's installed capacity.
    epsilon=0 counts flows at the plain thresholds; the default takes the
    strictly-above variant from params (used by the design sub-problem).
    Returns the model plus the variable-name map for decoding.
    """
    if epsilon is None:
        epsilon = params.epsilon
    _check_big_m(grid, fleet, params)
    model = ModelSpec("adversary")
    base = grid.base_mva
    oidx = {o.id: k for k, o in enumerate(fleet.operators)}

    h_names: dict[tuple[str, int], str] = {}
    lpos: dict[tuple[str, str], str] = {}
    lneg: dict[tuple[str, str], str] = {}
    for o in fleet.operators:
        if not o.hackable:
            continue
        for s in seg.used_segments(o.id):
            h_names[(o.id, s)] = model.add_variable(f"h_o{oidx[o.id]}_s{s}", kind=BINARY)
        for n in o.capacity_buses():
            ub_pos = params.raise_bound_mw(o.capacity[n]) / base
            ub_neg = params.shed_bound_mw(o.capacity[n]) / base
            if ub_pos > 0:
                lpos[(o.id, n)] = model.add_variable(
                    f"lp_o{oidx[o.id]}_n{n}", lower=0.0, upper=ub_pos)
            if ub_neg > 0:
                lneg[(o.id, n)] = model.add_variable(
                    f"ln_o{oidx[o.id]}_n{n}", lower=0.0, upper=ub_neg)

    model.add_constraint("budget", [(name, 1.0) for name in h_names.values()],
                         "<=", float(params.hack_budget))

    # alterations only through hacked segments, scaled by segment coverage
    for o in fleet.operators:
        if not o.hackable:
            continue
        for n in o.capacity_buses():
            ub_pos = params.raise_bound_mw(o.capacity[n]) / base
            ub_neg = params.shed_bound_mw(o.capacity[n]) / base
            cover = [
                (h_names[(o.id, s)], seg.fraction(o.id, n, s))
                for s in seg.used_segments(o.id)
                if seg.fraction(o.id, n, s) > 0
            ]
            if (o.id, n) in lpos:
                terms = [(lpos[(o.id, n)], 1.0)]
                terms += [(h, -ub_pos * fr) for h, fr in cover]
                model.add_constraint(f"cap_pos_o{oidx[o.id]}_n{n}", terms, "<=", 0.0)
            if (o.id, n) in lneg:
                terms = [(lneg[(o.id, n)], 1.0)]
                terms += [(h, -ub_neg * fr) for h, fr in cover]
                model.add_constraint(f"cap_neg_o{oidx[o.id]}_n{n}", terms, "<=", 0.0)

    # net alteration cap (two-sided); the attacker must stay within the
    # procured frequency reserve, unlike the fixed-attack copies used by
    # the defense master where the reserve simply absorbs any imbalance
    cap = params.laa_max_mw / base
    net_terms = [(name, 1.0) for name in lpos.values()]
    net_terms += [(name, -1.0) for name in lneg.values()]
    model.add_constraint("net_hi", net_terms, "<=", cap)
    model.add_constraint("net_lo", net_terms, ">=", -cap)

    names = add_physics_block(model, "", grid, mats, fleet, dispatch, fcr_gains,
                              params, epsilon=epsilon, lpos=lpos, lneg=lneg)
    names["h"] = h_names
    names["l_pos"] = lpos
    names["l_neg"] = lneg

    obj = [(names["u_pos"][l.id], 1.0) for l in grid.branches]
    obj += [(names["u_neg"][l.id], 1.0) for l in grid.branches]
    model.set_objective("max", obj)
    return model, names


def _decode_outcome(grid: GridCase, seg: Segmentation, names: dict,
                    res: backend.SolveResult, params: AdversaryParams) -> AttackOutcome:
    assert res.values is not None
    base = grid.base_mva
    vals = res.values
    h = {key: int(vals[name]) for key, name in names["h"].items()}
    l_pos = {key: vals[name] * base for key, name in names["l_pos"].items()}
    l_neg = {key: vals[name] * base for key, name in names["l_neg"].items()}
    flows = {lid: vals[name] * base for lid, name in names["flow"].items()}
    angles = {bid: vals[name] for bid, name in names["angle"].items()}
    u_pos = {lid: int(vals[name]) for lid, name in names["u_pos"].items()}
    u_neg = {lid: int(vals[name]) for lid, name in names["u_neg"].items()}

    # the indicators must never have been capped by the big-M band
    for l in grid.branches:
        limit = (l.overload_threshold / base) * (1.0 + params.epsilon) + params.big_m
        if abs(flows[l.id] / base) > limit - 1e-6:
            raise SolverFailure(
                f"flow on branch {l.id} reached the big-M band; increase big_m"
            )
    return AttackOutcome(
        attack=AttackInstance(h=h, l_pos=l_pos, l_neg=l_neg),
        flows_mw=flows,
        angles_rad=angles,
        freq_dev=vals[names["freq"]],
        u_pos=u_pos,
        u_neg=u_neg,
        overload_count=int(round(res.objective_value or 0.0)),
        solve_status=res.status,
    )


def solve_worst_case_attack(grid: GridCase, mats: NetworkMatrices, fleet: FleetModel,
                            seg: Segmentation, dispatch: Mapping[str, float],
                            fcr_gains: Mapping[str, float], params: AdversaryParams,
                            *, epsilon: float | None = None,
                            gap: float = backend.DEFAULT_GAP,
                            time_limit: float | None = None) -> AttackOutcome:
    """Maximize the number of overloaded branches under the given segmentation."""
    model, names = build_adversary_model(grid, mats, fleet, seg, dispatch,
                                         fcr_gains, params, epsilon=epsilon)
    res = backend.solve(model, gap=gap, time_limit=time_limit)
    if res.status in (SolveStatus.INFEASIBLE, SolveStatus.UNBOUNDED):
        # the no-attack point is always feasible, so this cannot legitimately happen
        raise SolverFailure(f"attack model reported {res.status}")
    if res.values is None:
        raise SolverFailure("attack solve hit its limit without an incumbent")
    return _decode_outcome(grid, seg, names, res, params)


def replay_attack(grid: GridCase, mats: NetworkMatrices, fleet: FleetModel,
                  dispatch: Mapping[str, float], fcr_gains: Mapping[str, float],
                  params: AdversaryParams, attack: AttackInstance,
                  *, epsilon: float | None = None) -> AttackOutcome:
    """Recompute the grid response to a fixed attack, independent of any solver.

    The attack magnitudes are taken as given (bounds against a segmentation
    are the caller's concern).  Flows follow from the alteration alone, so
    agreement with the MILP is a real consistency check.  A flow within
    REPLAY_EDGE_TOL (p.u.) of a threshold counts as overloaded.
    """
    if epsilon is None:
        epsilon = params.epsilon
    base = grid.base_mva
    pg = _gen_pu(grid, dispatch)
    kg = _gen_pu(grid, fcr_gains)
    sum_k = sum(kg.values())
    net = attack.net_mw() / base
    if sum_k <= 0.0:
        if abs(net) > REPLAY_EDGE_TOL:
            raise ZeroFcr("net alteration with zero total frequency gain")
        freq = 0.0
    else:
        freq = -net / sum_k

    delta = {b.id: 0.0 for b in grid.buses}
    for (o, n), mw in attack.l_pos.items():
        delta[n] += mw / base
    for (o, n), mw in attack.l_neg.items():
        delta[n] -= mw / base
    evcs_base = {b.id: 0.0 for b in grid.buses}
    for o in fleet.operators:
        for bus, mw in o.capacity.items():
            evcs_base[bus] += params.coincidence * mw / base

    inj = np.empty(len(grid.buses))
    for i, b in enumerate(grid.buses):
        gen = sum(pg[g.id] - kg[g.id] * freq for g in grid.generators if g.bus == b.id)
        inj[i] = gen - b.base_load / base - evcs_base[b.id] - delta[b.id]
    flows_arr, theta = dc_power_flow(mats, inj * base)

    flows = {l.id: float(flows_arr[j]) for j, l in enumerate(grid.branches)}
    angles = {b.id: float(theta[i]) for i, b in enumerate(grid.buses)}
    u_pos: dict[str, int] = {}
    u_neg: dict[str, int] = {}
    edge = REPLAY_EDGE_TOL * base
    for l in grid.branches:
        thr = l.overload_threshold * (1.0 + epsilon)
        u_pos[l.id] = int(flows[l.id] >= thr - edge)
        u_neg[l.id] = int(-flows[l.id] >= thr - edge)
    return AttackOutcome(
        attack=attack,
        flows_mw=flows,
        angles_rad=angles,
        freq_dev=freq,
        u_pos=u_pos,
        u_neg=u_neg,
        overload_count=sum(u_pos.values()) + sum(u_neg.values()),
        solve_status=None,
    )
