"""Command-line surface: threat, defend, evaluate, dispatch.

Exit codes: 0 ok, 2 input parse error, 3 infeasible dispatch, 4 solver
failure, 5 defense target unreachable, 6 segmentation/fleet mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from . import backend, io
from .adversary import replay_attack, solve_worst_case_attack
from .ccg import DefenseStatus, run_ccg
from .errors import (
    GridsegError,
    GridTooCoarse,
    InfeasibleDispatch,
    ParseError,
    SegmentationMismatch,
    SingularNetwork,
    SolutionIntegrityError,
    UnbalancedInjections,
    ZeroFcr,
)
from .fleet import (
    load_fleet_csv,
    load_segmentation_json,
    minimal_segmentation,
    save_segmentation_json,
    validate_segmentation,
)
from .grid import (
    build_network_matrices,
    dispatch_flows,
    economic_dispatch,
    fcr_gains_from_dispatch,
    load_grid_json,
)
from .heuristics import HeuristicSpec, design_heuristic

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_DISPATCH = 3
EXIT_SOLVER = 4
EXIT_DEFENSE = 5
EXIT_MISMATCH = 6


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def _prepare_scenario(grid, fleet, sc, gap, time_limit):
    """Stressed case, dispatch, flows and gains for one scenario."""
    grid_s = io.apply_scenario(grid, sc)
    mats = build_network_matrices(grid_s)
    fixed = io.scenario_fixed_load(grid_s, fleet, sc)
    dispatch = economic_dispatch(grid_s, fixed, gap=gap, time_limit=time_limit)
    flows0 = dispatch_flows(grid_s, mats, dispatch, fixed)
    fcr = fcr_gains_from_dispatch(dispatch)
    return grid_s, mats, fixed, dispatch, flows0, fcr


def _verified_attack(grid_s, mats, fleet, seg, dispatch, fcr, sc, gap, time_limit):
    """Worst case plus its replay; a count mismatch is a defect."""
    out = solve_worst_case_attack(grid_s, mats, fleet, seg, dispatch, fcr,
                                  sc.adversary, gap=gap, time_limit=time_limit)
    rep = replay_attack(grid_s, mats, fleet, dispatch, fcr, sc.adversary, out.attack)
    if rep.overload_count != out.overload_count:
        raise SolutionIntegrityError(
            f"scenario {sc.name!r}: solver reports {out.overload_count} overloads, "
            f"replay sees {rep.overload_count}"
        )
    return out


def _dispatch_entry(grid_s, dispatch, flows0):
    cost = sum(dispatch[g.id] * g.marginal_cost for g in grid_s.generators)
    return {
        "cost_per_hour": cost,
        "generation_mw": {g.id: dispatch[g.id] for g in grid_s.generators},
        "flows_mw": dict(sorted(flows0.items())),
    }


def _for_each_scenario(scenarios, jobs, fn):
    """Run fn over scenarios, keeping input order in the results."""
    if jobs <= 1 or len(scenarios) <= 1:
        return [fn(sc) for sc in scenarios]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, scenarios))


def cmd_dispatch(grid, fleet, cfg, out_dir, jobs) -> int:
    report = io.new_report("dispatch", _input_paths(cfg))

    def one(sc):
        grid_s, mats, fixed, dispatch, flows0, _ = _prepare_scenario(
            grid, fleet, sc, cfg.gap, cfg.time_limit)
        entry = {
            "name": sc.name,
            "dispatch": _dispatch_entry(grid_s, dispatch, flows0),
            "branch_loading": io.branch_loading_table(grid_s, flows0),
        }
        layer = io.geo_layer(grid_s, fleet, flows_mw=flows0)
        io.write_geojson(layer, os.path.join(out_dir, f"dispatch_{_slug(sc.name)}.geojson"))
        return entry

    report["scenarios"] = _for_each_scenario(cfg.scenarios, jobs, one)
    io.write_report(report, os.path.join(out_dir, "report.json"))
    return EXIT_OK


def cmd_threat(grid, fleet, cfg, out_dir, jobs) -> int:
    report = io.new_report("threat", _input_paths(cfg))

    def one(sc):
        grid_s, mats, fixed, dispatch, flows0, fcr = _prepare_scenario(
            grid, fleet, sc, cfg.gap, cfg.time_limit)
        seg = minimal_segmentation(fleet)
        out = _verified_attack(grid_s, mats, fleet, seg, dispatch, fcr, sc,
                               cfg.gap, cfg.time_limit)
        entry = {
            "name": sc.name,
            "k_max_overloads": sc.k_max_overloads,
            "dispatch": _dispatch_entry(grid_s, dispatch, flows0),
            "attack": io.attack_to_report(out, replay_verified=True),
            "branch_loading": io.branch_loading_table(
                grid_s, out.flows_mw, sc.adversary.epsilon),
        }
        layer = io.geo_layer(grid_s, fleet, flows_mw=out.flows_mw, attack=out)
        io.write_geojson(layer, os.path.join(out_dir, f"threat_{_slug(sc.name)}.geojson"))
        return entry

    report["scenarios"] = _for_each_scenario(cfg.scenarios, jobs, one)
    io.write_report(report, os.path.join(out_dir, "report.json"))
    return EXIT_OK


def cmd_defend(grid, fleet, cfg, out_dir, jobs, method) -> int:
    report = io.new_report("defend", _input_paths(cfg))
    report["method"] = method
    failed = []

    def one(sc):
        grid_s, mats, fixed, dispatch, flows0, fcr = _prepare_scenario(
            grid, fleet, sc, cfg.gap, cfg.time_limit)
        entry = {
            "name": sc.name,
            "k_max_overloads": sc.k_max_overloads,
            "dispatch": _dispatch_entry(grid_s, dispatch, flows0),
        }
        if method == "ccg":
            res = run_ccg(grid_s, fleet, dispatch, fcr, sc.adversary,
                          sc.k_max_overloads, gap=cfg.gap,
                          time_limit=cfg.time_limit, mats=mats,
                          max_iterations=cfg.defense.ccg_max_iterations)
            entry["defense"] = res.to_dict()
            seg = res.segmentation
            reached = res.status == DefenseStatus.OPTIMAL
        else:
            spec = HeuristicSpec(
                scheme=method,
                cs_mw=cfg.defense.cs_mw,
                ks=cfg.defense.ks,
                lam=cfg.defense.lam,
                max_iterations=cfg.defense.max_iterations,
            )
            res = design_heuristic(grid_s, fleet, dispatch, fcr, sc.adversary,
                                   spec, sc.k_max_overloads, gap=cfg.gap,
                                   time_limit=cfg.time_limit, mats=mats)
            entry["defense"] = res.to_dict()
            seg = res.segmentation
            reached = res.converged
        out = _verified_attack(grid_s, mats, fleet, seg, dispatch, fcr, sc,
                               cfg.gap, cfg.time_limit)
        entry["attack"] = io.attack_to_report(out, replay_verified=True)
        entry["target_reached"] = bool(out.overload_count <= sc.k_max_overloads)
        if not entry["target_reached"] or not reached:
            failed.append(sc.name)
        save_segmentation_json(
            seg, os.path.join(out_dir, f"segmentation_{_slug(sc.name)}.json"))
        layer = io.geo_layer(grid_s, fleet, flows_mw=out.flows_mw, attack=out)
        io.write_geojson(layer, os.path.join(out_dir, f"defend_{_slug(sc.name)}.geojson"))
        return entry

    report["scenarios"] = _for_each_scenario(cfg.scenarios, jobs, one)
    io.write_report(report, os.path.join(out_dir, "report.json"))
    if failed:
        log.error("defense target missed in scenarios: %s", ", ".join(failed))
        return EXIT_DEFENSE
    return EXIT_OK


def cmd_evaluate(grid, fleet, cfg, out_dir, jobs, seg_path) -> int:
    seg = load_segmentation_json(seg_path)
    violations = validate_segmentation(fleet, seg)
    if violations:
        raise SegmentationMismatch("; ".join(str(v) for v in violations[:10]))
    report = io.new_report("evaluate", {**_input_paths(cfg), "segmentation": seg_path})

    def one(sc):
        grid_s, mats, fixed, dispatch, flows0, fcr = _prepare_scenario(
            grid, fleet, sc, cfg.gap, cfg.time_limit)
        out = _verified_attack(grid_s, mats, fleet, seg, dispatch, fcr, sc,
                               cfg.gap, cfg.time_limit)
        entry = {
            "name": sc.name,
            "k_max_overloads": sc.k_max_overloads,
            "dispatch": _dispatch_entry(grid_s, dispatch, flows0),
            "attack": io.attack_to_report(out, replay_verified=True),
            "target_reached": bool(out.overload_count <= sc.k_max_overloads),
            "branch_loading": io.branch_loading_table(
                grid_s, out.flows_mw, sc.adversary.epsilon),
        }
        layer = io.geo_layer(grid_s, fleet, flows_mw=out.flows_mw, attack=out)
        io.write_geojson(layer, os.path.join(out_dir, f"evaluate_{_slug(sc.name)}.geojson"))
        return entry

    report["scenarios"] = _for_each_scenario(cfg.scenarios, jobs, one)
    report["segments_used"] = seg.segments_used_count()
    io.write_report(report, os.path.join(out_dir, "report.json"))
    return EXIT_OK


def _input_paths(cfg) -> dict:
    return dict(getattr(cfg, "_input_paths", {}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gridseg",
        description="Worst-case charging-fleet attacks and preventive segmentation "
                    "of operator control systems on DC-modeled grids.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, fleet_required=True):
        sp.add_argument("--case", required=True, help="grid case JSON")
        sp.add_argument("--fleet", required=fleet_required,
                        help="charging fleet CSV (aggregated or lat/lon rows)")
        sp.add_argument("--config", help="run configuration, JSON or TOML")
        sp.add_argument("--out-dir", default=".", help="directory for outputs")
        sp.add_argument("--jobs", type=int, default=1,
                        help="parallel scenario evaluations")
        sp.add_argument("--gap", type=float, help="relative MIP gap override")
        sp.add_argument("--time-limit", type=float,
                        help="per-solve time limit in seconds")
        sp.add_argument("--dump-lp", action="store_true",
                        help="write every solved model as LP text into out-dir")

    sp = sub.add_parser("threat", help="worst-case attack against the unsegmented fleet")
    common(sp)
    sp = sub.add_parser("defend", help="design a segmentation meeting the overload target")
    sp.add_argument("method", choices=io.DEFENSE_METHODS)
    sp.add_argument("--cs-mw", type=float, help="capacity per segment (uni_thres)")
    sp.add_argument("--ks", type=int, help="segments per operator / split arity")
    sp.add_argument("--lam", type=float, help="clustering balance weight")
    sp.add_argument("--max-iterations", type=int,
                    help="iteration cap for the iterative schemes")
    sp.add_argument("--ccg-max-iterations", type=int,
                    help="iteration cap for the exact design loop")
    common(sp)
    sp = sub.add_parser("evaluate", help="worst-case attack against a given segmentation")
    sp.add_argument("--segmentation", required=True, help="segmentation JSON")
    common(sp)
    sp = sub.add_parser("dispatch", help="economic dispatch of the configured scenarios")
    common(sp, fleet_required=False)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("GRIDSEG_LOGLEVEL", "INFO"),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        grid = load_grid_json(args.case)
        if args.config:
            cfg = io.load_config(args.config)
        else:
            cfg = io.config_from_dict(
                {"adversary": {"hack_budget": 0, "coincidence": 0.0}})
        overrides = {}
        if args.gap is not None:
            overrides["gap"] = args.gap
        if args.time_limit is not None:
            overrides["time_limit"] = args.time_limit
        if args.command == "defend":
            dfd = {}
            for attr in ("cs_mw", "ks", "lam", "max_iterations", "ccg_max_iterations"):
                if getattr(args, attr) is not None:
                    dfd[attr] = getattr(args, attr)
            if dfd:
                overrides["defense"] = replace(cfg.defense, **dfd, method=args.method)
            else:
                overrides["defense"] = replace(cfg.defense, method=args.method)
        if overrides:
            cfg = replace(cfg, **overrides)
        if args.fleet:
            fleet = load_fleet_csv(args.fleet, discretization=cfg.discretization,
                                   grid=grid, top_n_hackable=cfg.top_n_hackable)
        else:
            from .fleet import FleetModel
            fleet = FleetModel(operators=(), discretization=cfg.discretization)
        object.__setattr__(cfg, "_input_paths", {
            "case": args.case, "fleet": args.fleet or None,
            "config": args.config or None,
        })
        os.makedirs(args.out_dir, exist_ok=True)
        if args.dump_lp:
            backend.set_dump_dir(args.out_dir)

        if args.command == "threat":
            return cmd_threat(grid, fleet, cfg, args.out_dir, args.jobs)
        if args.command == "defend":
            return cmd_defend(grid, fleet, cfg, args.out_dir, args.jobs, args.method)
        if args.command == "evaluate":
            return cmd_evaluate(grid, fleet, cfg, args.out_dir, args.jobs,
                                args.segmentation)
        if args.command == "dispatch":
            return cmd_dispatch(grid, fleet, cfg, args.out_dir, args.jobs)
        raise AssertionError(f"unhandled command {args.command}")
    except (ParseError, SingularNetwork, UnbalancedInjections, ZeroFcr,
            ValueError) as exc:
        log.error("%s", exc)
        return EXIT_PARSE
    except InfeasibleDispatch as exc:
        log.error("dispatch infeasible: %s", exc)
        return EXIT_DISPATCH
    except SegmentationMismatch as exc:
        log.error("segmentation does not fit the fleet: %s", exc)
        return EXIT_MISMATCH
    except GridTooCoarse as exc:
        log.error("defense cannot be built on this grid: %s", exc)
        return EXIT_DEFENSE
    except GridsegError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    finally:
        backend.set_dump_dir(None)


if __name__ == "__main__":
    sys.exit(main())
