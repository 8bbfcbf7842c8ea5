"""Scenario configuration, report assembly and geo output."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Mapping

from .adversary import AdversaryParams, AttackOutcome
from .errors import ParseError
from .fleet import FleetModel
from .grid import GridCase, Branch, Bus, Generator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

REPORT_SCHEMA = "gridseg-report/1"

DEFENSE_METHODS = ("ccg", "uni_thres", "clus_seg", "itin_thres", "itin_clus")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    adversary: AdversaryParams
    load_scale: float = 1.0
    availability: Mapping[str, float] = field(default_factory=dict)
    rating_scale: float = 1.0
    overload_margin: float | None = None  # None keeps the case file's thresholds
    k_max_overloads: int = 1

    def __post_init__(self):
        if self.load_scale < 0 or self.rating_scale <= 0:
            raise ParseError(f"scenario {self.name!r}: bad scaling factors")
        if self.overload_margin is not None and self.overload_margin < 1.0:
            raise ParseError(f"scenario {self.name!r}: overload_margin must be >= 1")
        if self.k_max_overloads < 0:
            raise ParseError(f"scenario {self.name!r}: k_max_overloads must be >= 0")
        for cls, f in self.availability.items():
            if not 0.0 <= f <= 1.0:
                raise ParseError(
                    f"scenario {self.name!r}: availability[{cls}] outside [0, 1]")


@dataclass(frozen=True)
class DefenseConfig:
    method: str = "ccg"
    cs_mw: float | None = None
    ks: int | None = None
    lam: float = 1e5
    max_iterations: int = 10
    ccg_max_iterations: int | None = None

    def __post_init__(self):
        if self.method not in DEFENSE_METHODS:
            raise ParseError(f"unknown defense method {self.method!r}")


@dataclass(frozen=True)
class RunConfig:
    scenarios: tuple[ScenarioConfig, ...]
    defense: DefenseConfig = DefenseConfig()
    discretization: int = 1
    top_n_hackable: int = 20
    gap: float = 1e-6
    time_limit: float | None = None

    def __post_init__(self):
        if self.discretization < 1:
            raise ParseError("discretization must be >= 1")
        if self.top_n_hackable < 1:
            raise ParseError("top_n_hackable must be >= 1")
        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            raise ParseError("duplicate scenario names")


def _adversary_from_dict(doc: Mapping[str, Any]) -> AdversaryParams:
    known = {"hack_budget", "coincidence", "act_fraction", "v2g_fraction",
             "laa_max_mw", "big_m", "epsilon"}
    unknown = set(doc) - known
    if unknown:
        raise ParseError(f"unknown adversary keys: {sorted(unknown)}")
    if "hack_budget" not in doc or "coincidence" not in doc:
        raise ParseError("adversary needs at least hack_budget and coincidence")
    try:
        return AdversaryParams(
            hack_budget=int(doc["hack_budget"]),
            coincidence=float(doc["coincidence"]),
            act_fraction=float(doc.get("act_fraction", 1.0)),
            v2g_fraction=float(doc.get("v2g_fraction", 0.0)),
            laa_max_mw=float(doc.get("laa_max_mw", 0.0)),
            big_m=float(doc.get("big_m", 100.0)),
            epsilon=float(doc.get("epsilon", 1e-3)),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad adversary parameters: {exc}") from exc


def config_from_dict(doc: Mapping[str, Any]) -> RunConfig:
    try:
        adv_default = dict(doc.get("adversary", {}))
        k_default = int(doc.get("k_max_overloads", 1))
        raw_scenarios = doc.get("scenarios") or [{}]
        scenarios = []
        for i, raw in enumerate(raw_scenarios):
            adv_doc = {**adv_default, **dict(raw.get("adversary", {}))}
            margin = raw.get("overload_margin", doc.get("overload_margin"))
            scenarios.append(ScenarioConfig(
                name=str(raw.get("name", f"scenario{i}" if i else "base")),
                adversary=_adversary_from_dict(adv_doc),
                load_scale=float(raw.get("load_scale", doc.get("load_scale", 1.0))),
                availability={str(k): float(v)
                              for k, v in dict(raw.get(
                                  "availability", doc.get("availability", {}))).items()},
                rating_scale=float(raw.get("rating_scale", doc.get("rating_scale", 1.0))),
                overload_margin=None if margin is None else float(margin),
                k_max_overloads=int(raw.get("k_max_overloads", k_default)),
            ))
        dfd = dict(doc.get("defense", {}))
        defense = DefenseConfig(
            method=str(dfd.get("method", "ccg")),
            cs_mw=None if dfd.get("cs_mw") is None else float(dfd["cs_mw"]),
            ks=None if dfd.get("ks") is None else int(dfd["ks"]),
            lam=float(dfd.get("lam", 1e5)),
            max_iterations=int(dfd.get("max_iterations", 10)),
            ccg_max_iterations=(None if dfd.get("ccg_max_iterations") is None
                                else int(dfd["ccg_max_iterations"])),
        )
        solver = dict(doc.get("solver", {}))
        return RunConfig(
            scenarios=tuple(scenarios),
            defense=defense,
            discretization=int(doc.get("discretization", 1)),
            top_n_hackable=int(doc.get("top_n_hackable", 20)),
            gap=float(solver.get("gap", 1e-6)),
            time_limit=(None if solver.get("time_limit") is None
                        else float(solver["time_limit"])),
        )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"malformed config: {exc!r}") from exc


def load_config(path: str) -> RunConfig:
    """Read a run configuration, TOML or JSON by file extension."""
    try:
        if path.endswith(".toml"):
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        else:
            with open(path) as fh:
                doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read config {path!r}: {exc}") from exc
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ParseError(f"config {path!r} does not parse: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"config {path!r} must hold an object/table at top level")
    return config_from_dict(doc)


def apply_scenario(grid: GridCase, sc: ScenarioConfig) -> GridCase:
    """Stress a base case: scale loads and ratings, override availabilities.

    With an overload_margin, thresholds become scaled PATL times the margin;
    otherwise the case's own thresholds are scaled along with the ratings.
    """
    buses = tuple(dataclasses.replace(b, base_load=b.base_load * sc.load_scale)
                  for b in grid.buses)
    branches = []
    for l in grid.branches:
        patl = l.rating_patl * sc.rating_scale
        if sc.overload_margin is not None:
            thr = patl * sc.overload_margin
        else:
            thr = l.overload_threshold * sc.rating_scale
        branches.append(dataclasses.replace(l, rating_patl=patl, overload_threshold=thr))
    gens = []
    for g in grid.generators:
        if g.gen_class in sc.availability:
            g = dataclasses.replace(g, availability=sc.availability[g.gen_class])
        gens.append(g)
    return dataclasses.replace(grid, buses=buses, branches=tuple(branches),
                               generators=tuple(gens))


def scenario_fixed_load(grid: GridCase, fleet: FleetModel,
                        sc: ScenarioConfig) -> dict[str, float]:
    """Demand the dispatch must cover: scaled base load plus baseline charging."""
    evcs = fleet.bus_load_mw()
    return {
        b.id: b.base_load + sc.adversary.coincidence * evcs.get(b.id, 0.0)
        for b in grid.buses
    }


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def branch_loading_table(grid: GridCase, flows_mw: Mapping[str, float],
                         epsilon: float = 0.0) -> list[dict]:
    rows = []
    for l in grid.branches:
        f = flows_mw[l.id]
        thr = l.overload_threshold * (1.0 + epsilon)
        rows.append({
            "branch": l.id,
            "flow_mw": f,
            "rating_patl_mw": l.rating_patl,
            "overload_threshold_mw": l.overload_threshold,
            "loading_pct": 100.0 * abs(f) / l.rating_patl,
            "overloaded": bool(abs(f) >= thr - 1e-4),
        })
    return rows


def new_report(command: str, inputs: Mapping[str, str | None]) -> dict:
    digests = {}
    for kind, path in inputs.items():
        digests[kind] = None if path is None else {
            "path": path, "sha256": file_digest(path)}
    return {
        "schema": REPORT_SCHEMA,
        "command": command,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "inputs": digests,
        "scenarios": [],
    }


def write_report(report: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def attack_to_report(out: AttackOutcome, replay_verified: bool | None = None) -> dict:
    doc = {
        "overload_count": out.overload_count,
        "overloaded_branches": list(out.overloaded_branches()),
        "freq_dev": out.freq_dev,
        "net_alteration_mw": out.attack.net_mw(),
        **out.attack.to_dict(),
    }
    if replay_verified is not None:
        doc["replay_verified"] = bool(replay_verified)
    return doc


# -- geo layer ----------------------------------------------------------------

def _bus_geometry(b: Bus) -> dict | None:
    if b.lat is None or b.lon is None:
        return None
    return {"type": "Point", "coordinates": [b.lon, b.lat]}


def _branch_geometry(grid: GridCase, l: Branch) -> dict | None:
    by_id = {b.id: b for b in grid.buses}
    f, t = by_id[l.from_bus], by_id[l.to_bus]
    if None in (f.lat, f.lon, t.lat, t.lon):
        return None
    return {"type": "LineString",
            "coordinates": [[f.lon, f.lat], [t.lon, t.lat]]}


def geo_layer(grid: GridCase, fleet: FleetModel | None = None,
              flows_mw: Mapping[str, float] | None = None,
              attack: AttackOutcome | None = None) -> dict:
    """FeatureCollection with one Point per bus and one LineString per branch."""
    evcs = fleet.bus_load_mw() if fleet is not None else {}
    delta: dict[str, float] = {}
    if attack is not None:
        for (o, n), mw in attack.attack.l_pos.items():
            delta[n] = delta.get(n, 0.0) + mw
        for (o, n), mw in attack.attack.l_neg.items():
            delta[n] = delta.get(n, 0.0) - mw
    features = []
    for b in grid.buses:
        features.append({
            "type": "Feature",
            "geometry": _bus_geometry(b),
            "properties": {
                "kind": "bus",
                "id": b.id,
                "base_load_mw": b.base_load,
                "evcs_mw": evcs.get(b.id, 0.0),
                "load_alteration_mw": delta.get(b.id, 0.0),
            },
        })
    for l in grid.branches:
        props: dict[str, Any] = {
            "kind": "branch",
            "id": l.id,
            "rating_patl_mw": l.rating_patl,
            "overload_threshold_mw": l.overload_threshold,
        }
        if flows_mw is not None:
            props["flow_mw"] = flows_mw[l.id]
            props["loading_pct"] = 100.0 * abs(flows_mw[l.id]) / l.rating_patl
        if attack is not None:
            props["overloaded"] = bool(attack.u_pos[l.id] or attack.u_neg[l.id])
        features.append({
            "type": "Feature",
            "geometry": _branch_geometry(grid, l),
            "properties": props,
        })
    return {"type": "FeatureCollection", "features": features}


def write_geojson(layer: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(layer, fh, indent=2, sort_keys=True)
        fh.write("\n")
