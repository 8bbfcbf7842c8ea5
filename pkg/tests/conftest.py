import math

import numpy as np
import pytest

from gridseg.adversary import AdversaryParams
from gridseg.fleet import FleetModel, Operator
from gridseg.grid import Branch, Bus, Generator, GridCase, build_network_matrices


def ring3(rating=100.0, threshold=None, load2=90.0, load3=0.0):
    """Three buses in a ring, unit reactances, one cheap generator at bus 1."""
    thr = threshold if threshold is not None else rating
    return GridCase(
        buses=(Bus("1", 0.0), Bus("2", load2), Bus("3", load3)),
        branches=(
            Branch("l12", "1", "2", 1.0, rating, thr),
            Branch("l13", "1", "3", 1.0, rating, thr),
            Branch("l23", "2", "3", 1.0, rating, thr),
        ),
        generators=(
            Generator("g1", "1", 0.0, 500.0, 10.0),
            Generator("g3", "3", 0.0, 500.0, 40.0),
        ),
    )


def star_case(n_loads=3, rating=120.0, threshold=None, load=50.0):
    """Star: generator hub bus 0, one branch per load bus."""
    thr = threshold if threshold is not None else rating
    buses = [Bus("0", 0.0)]
    branches = []
    for i in range(1, n_loads + 1):
        buses.append(Bus(str(i), load))
        branches.append(Branch(f"l{i}", "0", str(i), 5.0, rating, thr))
    gens = (Generator("g0", "0", 0.0, 10_000.0, 12.0),)
    return GridCase(buses=tuple(buses), branches=tuple(branches), generators=gens)


def single_op_fleet(capacity, d=1, operator="op1"):
    """capacity: {bus: MW} for one hackable operator."""
    return FleetModel(operators=(Operator(operator, dict(capacity)),),
                      discretization=d)


def make_params(**kw):
    defaults = dict(hack_budget=1, coincidence=0.3, act_fraction=1.0,
                    v2g_fraction=0.0, laa_max_mw=1000.0, big_m=50.0,
                    epsilon=1e-6)
    defaults.update(kw)
    return AdversaryParams(**defaults)


def fixed_load_for(grid, fleet, coincidence):
    evcs = fleet.bus_load_mw()
    return {b.id: b.base_load + coincidence * evcs.get(b.id, 0.0)
            for b in grid.buses}


def random_micro_grid(rng, n_buses=None):
    """Random connected grid, 4-8 buses: spanning tree plus chords.

    Ratings are drawn wide enough for the dispatch to be feasible but
    tight enough that attacks can matter.
    """
    n = int(n_buses if n_buses is not None else rng.integers(4, 9))
    loads = rng.uniform(20.0, 80.0, size=n)
    loads[0] = 0.0
    buses = tuple(Bus(str(i), float(loads[i])) for i in range(n))

    edges = []
    for i in range(1, n):
        j = int(rng.integers(0, i))
        edges.append((j, i))
    extra = int(rng.integers(1, n))
    tries = 0
    while extra > 0 and tries < 50:
        a, b = sorted(rng.integers(0, n, size=2))
        tries += 1
        if a == b or (a, b) in edges:
            continue
        edges.append((a, b))
        extra -= 1

    total = float(loads.sum())
    branches = tuple(
        Branch(f"l{k}", str(a), str(b),
               susceptance=float(rng.uniform(2.0, 15.0)),
               rating_patl=float(rng.uniform(0.6, 1.2) * total),
               overload_threshold=float(rng.uniform(1.25, 1.45) * total))
        for k, (a, b) in enumerate(edges)
    )
    g_bus = [0, int(rng.integers(1, n))]
    gens = tuple(
        Generator(f"g{i}", str(gb), 0.0, 2.0 * total,
                  float(rng.uniform(5.0, 50.0)))
        for i, gb in enumerate(g_bus)
    )
    return GridCase(buses=buses, branches=branches, generators=gens)


def random_micro_fleet(rng, grid, n_ops=None, d=1):
    load_buses = [b.id for b in grid.buses if b.base_load > 0]
    n_ops = int(n_ops if n_ops is not None else rng.integers(1, 3))
    ops = []
    for i in range(n_ops):
        k = int(rng.integers(1, min(3, len(load_buses)) + 1))
        chosen = rng.choice(load_buses, size=k, replace=False)
        cap = {str(b): float(rng.uniform(10.0, 40.0)) for b in chosen}
        ops.append(Operator(f"op{i}", cap))
    return FleetModel(operators=tuple(ops), discretization=d)


@pytest.fixture(scope="session")
def rts24_env():
    """Shared stressed 24-bus environment at the bundled settings, D=2."""
    from gridseg import datasets
    from gridseg.grid import economic_dispatch, fcr_gains_from_dispatch
    from gridseg.io import apply_scenario, scenario_fixed_load

    case = datasets.rts24_case()
    cfg = datasets.rts24_config()
    scn = cfg.scenarios[0]
    grid = apply_scenario(case, scn)
    mats = build_network_matrices(grid)
    fleet = datasets.rts24_fleet(2, grid=case)
    fixed = scenario_fixed_load(grid, fleet, scn)
    dispatch = economic_dispatch(grid, fixed)
    fcr = fcr_gains_from_dispatch(dispatch)
    return {
        "case": case, "config": cfg, "scenario": scn, "grid": grid,
        "mats": mats, "fleet": fleet, "fixed": fixed,
        "dispatch": dispatch, "fcr": fcr,
    }
