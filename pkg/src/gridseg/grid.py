"""Grid data model and DC network computations.

Everything outward-facing speaks MW; network math runs in per-unit on the
case's MVA base.  The DC approximation is used throughout: branch flow is
susceptance times angle difference, losses are ignored, voltage magnitudes
are 1 p.u.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import backend
from .errors import (
    InfeasibleDispatch,
    ParseError,
    SingularNetwork,
    SolverFailure,
    UnbalancedInjections,
    ZeroFcr,
)

#: |sum of injections| above this (p.u.) means no DC flow exists
INJECTION_BALANCE_TOL = 1e-6
#: condition number beyond which the reduced matrix is treated as singular
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class Bus:
    id: str
    base_load: float = 0.0  # MW
    lat: float | None = None
    lon: float | None = None
    dist_grid_connected: bool = True


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    susceptance: float  # p.u. on system base
    rating_patl: float  # MW, permanently admissible loading
    overload_threshold: float  # MW, flow at/above this counts as overloaded


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    p_min: float  # MW
    p_max: float  # MW
    marginal_cost: float  # currency per MWh
    availability: float = 1.0
    gen_class: str = "conventional"


@dataclass(frozen=True)
class GridCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_mva: float = 100.0
    reference_bus: str | None = None

    def __post_init__(self):
        bus_ids = [b.id for b in self.buses]
        if len(set(bus_ids)) != len(bus_ids):
            raise ParseError("duplicate bus ids")
        branch_ids = [l.id for l in self.branches]
        if len(set(branch_ids)) != len(branch_ids):
            raise ParseError("duplicate branch ids")
        gen_ids = [g.id for g in self.generators]
        if len(set(gen_ids)) != len(gen_ids):
            raise ParseError("duplicate generator ids")
        known = set(bus_ids)
        for l in self.branches:
            if l.from_bus not in known or l.to_bus not in known:
                raise ParseError(f"branch {l.id} references unknown bus")
            if l.from_bus == l.to_bus:
                raise ParseError(f"branch {l.id} is a self-loop")
            if l.susceptance <= 0:
                raise ParseError(f"branch {l.id} needs susceptance > 0")
            if not (0 < l.rating_patl <= l.overload_threshold):
                raise ParseError(
                    f"branch {l.id} needs 0 < rating_patl <= overload_threshold"
                )
        for g in self.generators:
            if g.bus not in known:
                raise ParseError(f"generator {g.id} references unknown bus")
            if g.p_min < 0 or g.p_max < g.p_min:
                raise ParseError(f"generator {g.id} needs 0 <= p_min <= p_max")
            if not 0 <= g.availability <= 1:
                raise ParseError(f"generator {g.id} availability outside [0, 1]")
        if self.reference_bus is not None and self.reference_bus not in known:
            raise ParseError(f"reference bus {self.reference_bus!r} not in case")
        if self.base_mva <= 0:
            raise ParseError("base_mva must be positive")

    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def effective_reference_bus(self) -> str:
        """Reference from the case if set, else the lowest-id bus holding a generator."""
        if self.reference_bus is not None:
            return self.reference_bus
        gen_buses = {g.bus for g in self.generators}
        if not gen_buses:
            return min((b.id for b in self.buses), key=_id_sort_key)
        return min(gen_buses, key=_id_sort_key)

    def base_load_vector(self) -> np.ndarray:
        return np.array([b.base_load for b in self.buses])


def _id_sort_key(s: str):
    """Numeric ids sort numerically, everything else lexicographically."""
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


@dataclass(frozen=True, eq=False)
class NetworkMatrices:
    """Static network operators, all in per-unit on base_mva.

    incidence is |N| x |L| with one +1 (from side) and one -1 (to side) per
    column; branch_susceptance is |L| x |N| so that flows = branch_susceptance
    @ angles; reduced_bus_susceptance_inverse is the inverse of the bus
    susceptance matrix with the reference row/column removed.
    """

    bus_ids: tuple[str, ...]
    branch_ids: tuple[str, ...]
    reference_index: int
    base_mva: float
    incidence: np.ndarray
    branch_susceptance: np.ndarray
    reduced_bus_susceptance_inverse: np.ndarray

    @property
    def non_reference(self) -> np.ndarray:
        idx = np.arange(len(self.bus_ids))
        return idx[idx != self.reference_index]


def build_network_matrices(grid: GridCase) -> NetworkMatrices:
    n = len(grid.buses)
    m = len(grid.branches)
    if n == 0:
        raise ParseError("grid has no buses")
    bidx = grid.bus_index()
    ref = bidx[grid.effective_reference_bus()]

    incidence = np.zeros((n, m))
    bsus = np.zeros((m, n))
    for j, l in enumerate(grid.branches):
        f, t = bidx[l.from_bus], bidx[l.to_bus]
        incidence[f, j] = 1.0
        incidence[t, j] = -1.0
        bsus[j, f] = l.susceptance
        bsus[j, t] = -l.susceptance

    bbus = incidence @ bsus  # |N| x |N| bus susceptance matrix
    keep = [i for i in range(n) if i != ref]
    reduced = bbus[np.ix_(keep, keep)]
    if reduced.size:
        if not np.all(np.isfinite(reduced)) or np.linalg.cond(reduced) > _COND_LIMIT:
            raise SingularNetwork(
                "reduced bus susceptance matrix is singular; grid is disconnected"
            )
        reduced_inv = np.linalg.inv(reduced)
    else:
        reduced_inv = np.zeros((0, 0))

    return NetworkMatrices(
        bus_ids=tuple(b.id for b in grid.buses),
        branch_ids=tuple(l.id for l in grid.branches),
        reference_index=ref,
        base_mva=grid.base_mva,
        incidence=incidence,
        branch_susceptance=bsus,
        reduced_bus_susceptance_inverse=reduced_inv,
    )


def dc_power_flow(matrices: NetworkMatrices,
                  injections_mw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flows (MW, per branch) and angles (rad, per bus) for given net injections.

    Injections must balance to ~zero; the reference angle is pinned at 0.
    """
    inj = np.asarray(injections_mw, dtype=float) / matrices.base_mva
    if inj.shape != (len(matrices.bus_ids),):
        raise ValueError("injection vector length does not match bus count")
    if abs(inj.sum()) > INJECTION_BALANCE_TOL:
        raise UnbalancedInjections(
            f"injections sum to {inj.sum() * matrices.base_mva:.6g} MW"
        )
    keep = matrices.non_reference
    theta = np.zeros(len(matrices.bus_ids))
    if keep.size:
        theta[keep] = matrices.reduced_bus_susceptance_inverse @ inj[keep]
    flows = matrices.branch_susceptance @ theta * matrices.base_mva
    return flows, theta


def electrical_distances(matrices: NetworkMatrices) -> np.ndarray:
    """Pairwise Thevenin-style distance |Z_nn + Z_kk - 2 Z_nk| between buses.

    Z is the reduced susceptance inverse lifted back to full size with a zero
    row/column at the reference.  Symmetric, zero diagonal.
    """
    n = len(matrices.bus_ids)
    z = np.zeros((n, n))
    keep = matrices.non_reference
    z[np.ix_(keep, keep)] = matrices.reduced_bus_susceptance_inverse
    diag = np.diag(z)
    d = np.abs(diag[:, None] + diag[None, :] - 2.0 * z)
    np.fill_diagonal(d, 0.0)
    return d


def economic_dispatch(grid: GridCase, fixed_load_mw: Mapping[str, float] | np.ndarray,
                      *, gap: float = backend.DEFAULT_GAP,
                      time_limit: float | None = None) -> dict[str, float]:
    """Cost-minimal generator dispatch meeting a fixed nodal load, DC-constrained.

    fixed_load_mw is either a bus_id -> MW mapping or a vector in bus order.
    Branch flows are limited to rating_patl.  Returns generator id -> MW.
    """
    load = _as_bus_vector(grid, fixed_load_mw)
    mats = build_network_matrices(grid)
    base = grid.base_mva
    bidx = grid.bus_index()

    m = backend.ModelSpec("dispatch")
    for g in grid.generators:
        m.add_variable(f"pg_{g.id}", lower=g.p_min * g.availability / base,
                       upper=g.p_max * g.availability / base)
    for l in grid.branches:
        m.add_variable(f"f_{l.id}", lower=-l.rating_patl / base,
                       upper=l.rating_patl / base)
    for b in grid.buses:
        m.add_variable(f"th_{b.id}", lower=-math.inf, upper=math.inf)

    # nodal balance: generation - load = outgoing flow
    for i, b in enumerate(grid.buses):
        terms: list[tuple[str, float]] = []
        for g in grid.generators:
            if g.bus == b.id:
                terms.append((f"pg_{g.id}", 1.0))
        for j, l in enumerate(grid.branches):
            coef = mats.incidence[i, j]
            if coef:
                terms.append((f"f_{l.id}", -coef))
        m.add_constraint(f"bal_{b.id}", terms, "==", load[i] / base)
    # flow definition from angles
    for j, l in enumerate(grid.branches):
        m.add_constraint(
            f"flow_{l.id}",
            [(f"th_{l.from_bus}", l.susceptance), (f"th_{l.to_bus}", -l.susceptance),
             (f"f_{l.id}", -1.0)],
            "==", 0.0,
        )
    m.add_constraint("ref_angle", [(f"th_{grid.effective_reference_bus()}", 1.0)], "==", 0.0)
    m.set_objective("min", [(f"pg_{g.id}", g.marginal_cost * base) for g in grid.generators])

    res = backend.solve(m, gap=gap, time_limit=time_limit)
    if res.status == backend.SolveStatus.INFEASIBLE:
        raise InfeasibleDispatch("no dispatch satisfies bounds, balance and ratings")
    if res.values is None:
        raise SolverFailure(f"dispatch solve ended with status {res.status}")
    return {g.id: res.values[f"pg_{g.id}"] * base for g in grid.generators}


def dispatch_flows(grid: GridCase, matrices: NetworkMatrices,
                   dispatch: Mapping[str, float],
                   fixed_load_mw: Mapping[str, float] | np.ndarray) -> dict[str, float]:
    """Branch flows implied by a dispatch, recomputed from injections alone."""
    load = _as_bus_vector(grid, fixed_load_mw)
    inj = -load
    bidx = grid.bus_index()
    for g in grid.generators:
        inj[bidx[g.bus]] += dispatch[g.id]
    flows, _ = dc_power_flow(matrices, inj)
    return {l.id: float(flows[j]) for j, l in enumerate(grid.branches)}


def fcr_gains_from_dispatch(dispatch: Mapping[str, float]) -> dict[str, float]:
    """Frequency-response gains proportional to dispatched output (factor 1)."""
    if all(v == 0 for v in dispatch.values()):
        raise ZeroFcr("all dispatches are zero; no frequency response available")
    return {k: float(v) for k, v in dispatch.items()}


def _as_bus_vector(grid: GridCase, values: Mapping[str, float] | np.ndarray) -> np.ndarray:
    if isinstance(values, Mapping):
        unknown = set(values) - {b.id for b in grid.buses}
        if unknown:
            raise ParseError(f"load references unknown buses: {sorted(unknown)}")
        return np.array([float(values.get(b.id, 0.0)) for b in grid.buses])
    vec = np.asarray(values, dtype=float)
    if vec.shape != (len(grid.buses),):
        raise ParseError("load vector length does not match bus count")
    return vec


# -- case file format -------------------------------------------------------

def grid_from_dict(doc: dict) -> GridCase:
    try:
        buses = tuple(
            Bus(
                id=str(b["id"]),
                base_load=float(b.get("base_load", 0.0)),
                lat=None if b.get("lat") is None else float(b["lat"]),
                lon=None if b.get("lon") is None else float(b["lon"]),
                dist_grid_connected=bool(b.get("dist_grid_connected", True)),
            )
            for b in doc["buses"]
        )
        branches = []
        for l in doc["branches"]:
            patl = float(l["rating_patl"])
            branches.append(Branch(
                id=str(l["id"]),
                from_bus=str(l["from_bus"]),
                to_bus=str(l["to_bus"]),
                susceptance=float(l["susceptance"]),
                rating_patl=patl,
                overload_threshold=float(l.get("overload_threshold", patl)),
            ))
        generators = tuple(
            Generator(
                id=str(g["id"]),
                bus=str(g["bus"]),
                p_min=float(g.get("p_min", 0.0)),
                p_max=float(g["p_max"]),
                marginal_cost=float(g.get("marginal_cost", 0.0)),
                availability=float(g.get("availability", 1.0)),
                gen_class=str(g.get("class", "conventional")),
            )
            for g in doc["generators"]
        )
        ref = doc.get("reference_bus")
        return GridCase(
            buses=buses,
            branches=tuple(branches),
            generators=generators,
            base_mva=float(doc.get("base_mva", 100.0)),
            reference_bus=None if ref is None else str(ref),
        )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed grid case: {exc!r}") from exc


def grid_to_dict(grid: GridCase) -> dict:
    return {
        "base_mva": grid.base_mva,
        "reference_bus": grid.reference_bus,
        "buses": [
            {
                "id": b.id,
                "base_load": b.base_load,
                "lat": b.lat,
                "lon": b.lon,
                "dist_grid_connected": b.dist_grid_connected,
            }
            for b in grid.buses
        ],
        "branches": [
            {
                "id": l.id,
                "from_bus": l.from_bus,
                "to_bus": l.to_bus,
                "susceptance": l.susceptance,
                "rating_patl": l.rating_patl,
                "overload_threshold": l.overload_threshold,
            }
            for l in grid.branches
        ],
        "generators": [
            {
                "id": g.id,
                "bus": g.bus,
                "p_min": g.p_min,
                "p_max": g.p_max,
                "marginal_cost": g.marginal_cost,
                "availability": g.availability,
                "class": g.gen_class,
            }
            for g in grid.generators
        ],
    }


def load_grid_json(path: str) -> GridCase:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read grid case {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"grid case {path!r} is not valid JSON: {exc}") from exc
    return grid_from_dict(doc)


def save_grid_json(grid: GridCase, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(grid_to_dict(grid), fh, indent=2, sort_keys=True)
        fh.write("\n")
