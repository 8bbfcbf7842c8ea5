"""Charging-station operators and the segmentation of their control systems.

A segmentation splits each operator's controllable charging capacity at every
bus across numbered segments on a 1/D grid.  Numerators are stored as
integers over the common denominator D so that assignment arithmetic stays
exact; fractions only appear when talking to the optimization models.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import GridTooCoarse, ParseError
from .grid import GridCase, _id_sort_key

#: id given to the merged non-hackable remainder of the fleet
REST_OPERATOR_ID = "others"


@dataclass(frozen=True)
class Operator:
    id: str
    capacity: Mapping[str, float]  # bus id -> controllable MW
    hackable: bool = True
    max_segments: int | None = None  # None -> D * number of capacity buses

    def total_capacity(self) -> float:
        return float(sum(self.capacity.values()))

    def capacity_buses(self) -> tuple[str, ...]:
        return tuple(sorted((b for b, mw in self.capacity.items() if mw > 0),
                            key=_id_sort_key))


@dataclass(frozen=True)
class FleetModel:
    operators: tuple[Operator, ...]
    discretization: int  # D, the assignment grid denominator

    def __post_init__(self):
        if self.discretization < 1:
            raise ParseError("discretization D must be >= 1")
        ids = [o.id for o in self.operators]
        if len(set(ids)) != len(ids):
            raise ParseError("duplicate operator ids")
        for o in self.operators:
            if any(mw < 0 for mw in o.capacity.values()):
                raise ParseError(f"operator {o.id} has negative capacity")
            if o.max_segments is not None and o.max_segments < 1:
                raise ParseError(f"operator {o.id} needs max_segments >= 1")

    def operator(self, op_id: str) -> Operator:
        for o in self.operators:
            if o.id == op_id:
                return o
        raise KeyError(op_id)

    def max_segments(self, op: Operator) -> int:
        if op.max_segments is not None:
            return op.max_segments
        return max(1, self.discretization * len(op.capacity_buses()))

    def hackable_operators(self) -> tuple[Operator, ...]:
        return tuple(o for o in self.operators if o.hackable)

    def bus_load_mw(self) -> dict[str, float]:
        """Installed charging capacity per bus, summed over all operators."""
        out: dict[str, float] = {}
        for o in self.operators:
            for bus, mw in o.capacity.items():
                out[bus] = out.get(bus, 0.0) + mw
        return out

    def total_capacity(self) -> float:
        return float(sum(o.total_capacity() for o in self.operators))


@dataclass
class Segmentation:
    """Integer-numerator assignment of per-bus capacity shares to segments."""

    d: int
    assignments: dict[tuple[str, str, int], int]  # (operator, bus, segment) -> numerator
    used: dict[tuple[str, int], bool]  # (operator, segment) -> flag

    def fraction(self, op_id: str, bus_id: str, segment: int) -> float:
        return self.assignments.get((op_id, bus_id, segment), 0) / self.d

    def numerator(self, op_id: str, bus_id: str, segment: int) -> int:
        return self.assignments.get((op_id, bus_id, segment), 0)

    def used_segments(self, op_id: str) -> tuple[int, ...]:
        return tuple(sorted(s for (o, s), flag in self.used.items()
                            if o == op_id and flag))

    def segments_used_count(self) -> int:
        return sum(1 for flag in self.used.values() if flag)

    def coverage(self, op_id: str, bus_id: str, segments: Iterable[int]) -> float:
        """Fraction of (op, bus) capacity reachable through the given segments."""
        num = sum(self.assignments.get((op_id, bus_id, s), 0) for s in set(segments))
        return num / self.d

    def canonical_key(self) -> tuple:
        """Hashable form invariant under relabeling of an operator's segments."""
        per_op: dict[str, dict[int, list[tuple[str, int]]]] = {}
        for (o, s), flag in self.used.items():
            if flag:
                per_op.setdefault(o, {}).setdefault(s, [])
        for (o, n, s), num in self.assignments.items():
            if num:
                per_op.setdefault(o, {}).setdefault(s, []).append((n, num))
        ops = []
        for o in sorted(per_op, key=_id_sort_key):
            vectors = tuple(sorted(tuple(sorted(v)) for v in per_op[o].values()))
            ops.append((o, vectors))
        return (self.d, tuple(ops))

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        assignments = [
            {"operator": o, "bus": n, "segment": s, "numerator": num}
            for (o, n, s), num in sorted(self.assignments.items(),
                                         key=lambda kv: (kv[0][0], _id_sort_key(kv[0][1]), kv[0][2]))
            if num
        ]
        segments = [
            {"operator": o, "segment": s, "used": bool(flag)}
            for (o, s), flag in sorted(self.used.items())
            if flag
        ]
        return {"D": self.d, "assignments": assignments, "segments": segments}

    @classmethod
    def from_dict(cls, doc: dict) -> "Segmentation":
        try:
            d = int(doc["D"])
            assignments = {}
            for row in doc.get("assignments", []):
                key = (str(row["operator"]), str(row["bus"]), int(row["segment"]))
                if key in assignments:
                    raise ParseError(f"duplicate assignment entry {key}")
                assignments[key] = int(row["numerator"])
            used = {}
            for row in doc.get("segments", []):
                key = (str(row["operator"]), int(row["segment"]))
                if key in used:
                    raise ParseError(f"duplicate segment entry {key}")
                used[key] = bool(row["used"])
        except ParseError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed segmentation: {exc!r}") from exc
        return cls(d=d, assignments=assignments, used=used)


def save_segmentation_json(seg: Segmentation, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(seg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_segmentation_json(path: str) -> Segmentation:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read segmentation {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"segmentation {path!r} is not valid JSON: {exc}") from exc
    return Segmentation.from_dict(doc)


# -- canonical segmentations -------------------------------------------------

def minimal_segmentation(fleet: FleetModel) -> Segmentation:
    """Everything on one segment per operator: the unsegmented status quo."""
    assignments: dict[tuple[str, str, int], int] = {}
    used: dict[tuple[str, int], bool] = {}
    for o in fleet.operators:
        used[(o.id, 1)] = True
        for bus in o.capacity_buses():
            assignments[(o.id, bus, 1)] = fleet.discretization
    return Segmentation(fleet.discretization, assignments, used)


def maximal_segmentation(fleet: FleetModel) -> Segmentation:
    """Finest representable split: 1/D of one bus per segment.

    When an operator's max_segments cannot host all D * #buses unit shares,
    the units are dealt round-robin across the permitted segments, which
    keeps the shares as balanced as the grid allows.
    """
    d = fleet.discretization
    assignments: dict[tuple[str, str, int], int] = {}
    used: dict[tuple[str, int], bool] = {}
    for o in fleet.operators:
        buses = o.capacity_buses()
        cap = fleet.max_segments(o)
        units = [(bus, u) for bus in buses for u in range(d)]
        nseg = max(1, min(cap, len(units))) if units else 1
        used[(o.id, 1)] = True  # operators without capacity still own one segment
        for k, (bus, _) in enumerate(units):
            s = 1 + k % nseg
            key = (o.id, bus, s)
            assignments[key] = assignments.get(key, 0) + 1
            used[(o.id, s)] = True
    return Segmentation(d, assignments, used)


# -- validation ---------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    constraint: str
    operator: str | None = None
    bus: str | None = None
    segment: int | None = None
    detail: str = ""

    def __str__(self) -> str:
        where = ", ".join(
            f"{k}={v}" for k, v in
            (("operator", self.operator), ("bus", self.bus), ("segment", self.segment))
            if v is not None
        )
        return f"{self.constraint} [{where}] {self.detail}".rstrip()


def validate_segmentation(fleet: FleetModel, seg: Segmentation) -> list[Violation]:
    """Check a segmentation against a fleet; returns all violations found.

    Checks, in order: grid denominators agree; references resolve; numerators
    sit in [0, D]; per (operator, bus) the numerators sum to exactly D; any
    positive assignment lands on a used segment; used segments form a prefix
    1..k of the operator's segment range.
    """
    out: list[Violation] = []
    d = fleet.discretization
    if seg.d != d:
        out.append(Violation("grid-denominator-mismatch",
                             detail=f"segmentation D={seg.d}, fleet D={d}"))
    ops = {o.id: o for o in fleet.operators}

    for (o, n, s), num in sorted(seg.assignments.items()):
        if o not in ops:
            out.append(Violation("unknown-operator", operator=o, bus=n, segment=s))
            continue
        op = ops[o]
        if n not in op.capacity or op.capacity.get(n, 0.0) <= 0:
            out.append(Violation("bus-without-capacity", operator=o, bus=n, segment=s))
        if not 1 <= s <= fleet.max_segments(op):
            out.append(Violation("segment-out-of-range", operator=o, bus=n, segment=s,
                                 detail=f"limit {fleet.max_segments(op)}"))
        if not 0 <= num <= seg.d:
            out.append(Violation("numerator-out-of-range", operator=o, bus=n, segment=s,
                                 detail=f"numerator {num}"))
        if num > 0 and not seg.used.get((o, s), False):
            out.append(Violation("assignment-on-unused-segment", operator=o, bus=n,
                                 segment=s))

    for (o, s), flag in sorted(seg.used.items()):
        if o not in ops:
            out.append(Violation("unknown-operator", operator=o, segment=s))
        elif flag and not 1 <= s <= fleet.max_segments(ops[o]):
            out.append(Violation("segment-out-of-range", operator=o, segment=s,
                                 detail=f"limit {fleet.max_segments(ops[o])}"))

    # capacity must be fully assigned, on the segmentation's own grid
    for o in fleet.operators:
        for bus in o.capacity_buses():
            total = sum(num for (oo, nn, ss), num in seg.assignments.items()
                        if oo == o.id and nn == bus)
            if total != seg.d:
                out.append(Violation("capacity-not-fully-assigned", operator=o.id,
                                     bus=bus, detail=f"sum {total} of {seg.d}"))
        flags = seg.used_segments(o.id)
        if flags and flags != tuple(range(1, len(flags) + 1)):
            out.append(Violation("used-segments-not-contiguous", operator=o.id,
                                 detail=f"used {flags}"))
    return out


# -- fleet ingestion ----------------------------------------------------------

def _haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    r = 6371.0
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * r * math.asin(min(1.0, math.sqrt(a)))


def nearest_connection_bus(grid: GridCase, lat: float, lon: float) -> str:
    """Closest distribution-grid-connected bus by great-circle distance.

    Ties go to the lowest bus id.
    """
    candidates = [b for b in grid.buses
                  if b.dist_grid_connected and b.lat is not None and b.lon is not None]
    if not candidates:
        raise ParseError("no distribution-connected bus with coordinates in case")
    best = min(candidates,
               key=lambda b: (_haversine_km(lat, lon, b.lat, b.lon), _id_sort_key(b.id)))
    return best.id


def build_fleet(station_rows: Sequence[dict], *, discretization: int,
                grid: GridCase | None = None, top_n_hackable: int = 20) -> FleetModel:
    """Aggregate station records into operators and mark the hackable ones.

    Rows either carry bus_id/capacity_mw directly or lat/lon/capacity_kw, in
    which case stations are mapped to the nearest distribution-connected bus
    of the grid.  The top_n_hackable largest operators by installed capacity
    stay attackable; everything else is pooled into one non-hackable rest.
    """
    per_op: dict[str, dict[str, float]] = {}
    for row in station_rows:
        op = str(row["operator_id"])
        if "bus_id" in row and row.get("bus_id") not in (None, ""):
            bus = str(row["bus_id"])
            mw = float(row["capacity_mw"])
        else:
            if grid is None:
                raise ParseError("lat/lon station rows need a grid case for bus mapping")
            bus = nearest_connection_bus(grid, float(row["lat"]), float(row["lon"]))
            mw = float(row["capacity_kw"]) / 1000.0
        if mw < 0:
            raise ParseError(f"negative station capacity for operator {op!r}")
        if grid is not None and bus not in {b.id for b in grid.buses}:
            raise ParseError(f"station of {op!r} references unknown bus {bus!r}")
        per_op.setdefault(op, {})
        per_op[op][bus] = per_op[op].get(bus, 0.0) + mw

    ranked = sorted(per_op, key=lambda o: (-sum(per_op[o].values()), _id_sort_key(o)))
    top = ranked[:top_n_hackable]
    rest = ranked[top_n_hackable:]

    operators = [
        Operator(id=o, capacity=dict(sorted(per_op[o].items(),
                                            key=lambda kv: _id_sort_key(kv[0]))),
                 hackable=True)
        for o in sorted(top, key=_id_sort_key)
    ]
    if rest:
        pooled: dict[str, float] = {}
        for o in rest:
            for bus, mw in per_op[o].items():
                pooled[bus] = pooled.get(bus, 0.0) + mw
        rest_id = REST_OPERATOR_ID
        while rest_id in per_op:
            rest_id = "_" + rest_id
        operators.append(Operator(
            id=rest_id,
            capacity=dict(sorted(pooled.items(), key=lambda kv: _id_sort_key(kv[0]))),
            hackable=False,
        ))
    return FleetModel(operators=tuple(operators), discretization=discretization)


def load_fleet_csv(path: str, *, discretization: int, grid: GridCase | None = None,
                   top_n_hackable: int = 20) -> FleetModel:
    """Read station records; format detected from the CSV header.

    Aggregated format: operator_id,bus_id,capacity_mw
    Raw format:        operator_id,lat,lon,capacity_kw
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = set(reader.fieldnames or ())
            rows = list(reader)
    except OSError as exc:
        raise ParseError(f"cannot read fleet file {path!r}: {exc}") from exc
    except csv.Error as exc:
        raise ParseError(f"fleet file {path!r} is not valid CSV: {exc}") from exc
    if {"operator_id", "bus_id", "capacity_mw"} <= header:
        pass
    elif {"operator_id", "lat", "lon", "capacity_kw"} <= header:
        pass
    else:
        raise ParseError(
            f"fleet file {path!r}: header must contain operator_id,bus_id,capacity_mw "
            "or operator_id,lat,lon,capacity_kw"
        )
    try:
        return build_fleet(rows, discretization=discretization, grid=grid,
                           top_n_hackable=top_n_hackable)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"fleet file {path!r}: {exc}") from exc
