import math
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import (fixed_load_for, make_params, random_micro_fleet,
                      random_micro_grid, single_op_fleet, star_case)
from gridseg.adversary import solve_worst_case_attack
from gridseg.errors import TooLarge
from gridseg.fleet import FleetModel, Operator, minimal_segmentation, validate_segmentation
from gridseg.grid import build_network_matrices, economic_dispatch
from gridseg.oracle import (_compositions, brute_force_defense,
                            enumerate_segmentations, lattice_attack_search)


def test_compositions():
    out = list(_compositions(3, 2))
    assert out == [(0, 3), (1, 2), (2, 1), (3, 0)]
    assert len(list(_compositions(4, 3))) == math.comb(4 + 2, 2)
    assert all(sum(c) == 4 for c in _compositions(4, 3))


def one_op(capacity, d, max_segments=None):
    return FleetModel(operators=(Operator("o", capacity, max_segments=max_segments),),
                      discretization=d)


def test_enumeration_micro_counts():
    # one charging point, no split possible
    assert len(enumerate_segmentations(one_op({"1": 5.0}, 1, 2))) == 1
    # two buses on a unit grid: together or apart
    assert len(enumerate_segmentations(one_op({"1": 5.0, "2": 5.0}, 1, 2))) == 2
    # one bus on a half grid: whole, or two halves
    assert len(enumerate_segmentations(one_op({"1": 5.0}, 2, 2))) == 2


def test_enumeration_products_and_validity():
    fleet = FleetModel(
        operators=(Operator("a", {"1": 5.0}, max_segments=2),
                   Operator("b", {"2": 5.0}, max_segments=2)),
        discretization=2,
    )
    segs = enumerate_segmentations(fleet)
    # two layouts per operator, independent
    assert len(segs) == 4
    keys = {s.canonical_key() for s in segs}
    assert len(keys) == len(segs)
    for s in segs:
        assert validate_segmentation(fleet, s) == []


def test_enumeration_too_large():
    with pytest.raises(TooLarge):
        enumerate_segmentations(one_op({str(i): 1.0 for i in range(6)}, 6),
                                cap=100)
    # the per-operator spaces fit but their product does not
    single = len(enumerate_segmentations(one_op({"1": 1.0, "2": 1.0}, 2)))
    assert single > 1
    pair = FleetModel(
        operators=(Operator("a", {"1": 1.0, "2": 1.0}),
                   Operator("b", {"3": 1.0, "4": 1.0})),
        discretization=2,
    )
    with pytest.raises(TooLarge):
        enumerate_segmentations(pair, cap=single**2 - 1)


def star_env(rating=75.0, coincidence=0.3):
    grid = star_case(n_loads=2, rating=rating)
    mats = build_network_matrices(grid)
    fleet = single_op_fleet({"1": 30.0})
    dispatch = economic_dispatch(grid, fixed_load_for(grid, fleet, coincidence))
    return grid, mats, fleet, dispatch, dict(dispatch)


def test_lattice_finds_the_star_overload():
    grid, mats, fleet, dispatch, gains = star_env()
    params = make_params()
    seg = minimal_segmentation(fleet)
    best = lattice_attack_search(grid, mats, fleet, seg, dispatch, gains, params)
    exact = solve_worst_case_attack(grid, mats, fleet, seg, dispatch, gains, params)
    assert best.overload_count == exact.overload_count == 1


def test_lattice_is_a_lower_bound_on_micros():
    rng = np.random.default_rng(11)
    done = 0
    tries = 0
    while done < 5 and tries < 30:
        tries += 1
        grid = random_micro_grid(rng, n_buses=int(rng.integers(4, 6)))
        fleet = random_micro_fleet(rng, grid, n_ops=1)
        params = make_params(hack_budget=1, coincidence=0.4)
        try:
            dispatch = economic_dispatch(grid, fixed_load_for(grid, fleet, 0.4))
        except Exception:
            continue
        mats = build_network_matrices(grid)
        gains = dict(dispatch)
        seg = minimal_segmentation(fleet)
        lat = lattice_attack_search(grid, mats, fleet, seg, dispatch, gains,
                                    params)
        exact = solve_worst_case_attack(grid, mats, fleet, seg, dispatch,
                                        gains, params)
        assert lat.overload_count <= exact.overload_count
        done += 1
    assert done == 5


def test_lattice_respects_net_cap():
    grid, mats, fleet, dispatch, gains = star_env(rating=60.0, coincidence=0.0)
    params = make_params(coincidence=0.0, laa_max_mw=5.0)
    seg = minimal_segmentation(fleet)
    best = lattice_attack_search(grid, mats, fleet, seg, dispatch, gains, params)
    assert best.overload_count == 0
    assert abs(best.attack.net_mw()) <= 5.0 + 1e-9


def test_lattice_guards():
    grid, mats, fleet, dispatch, gains = star_env()
    seg = minimal_segmentation(fleet)
    with pytest.raises(ValueError):
        lattice_attack_search(grid, mats, fleet, seg, dispatch, gains,
                              make_params(), levels=1)
    with pytest.raises(TooLarge):
        lattice_attack_search(grid, mats, fleet, seg, dispatch, gains,
                              make_params(), cap=3)


def test_brute_force_minimal_count():
    grid, mats, fleet, dispatch, gains = star_env()
    fleet = single_op_fleet({"1": 30.0}, d=2)
    params = make_params()
    res = brute_force_defense(grid, mats, fleet, dispatch, gains, params, 0)
    assert res.feasible and res.segments_used == 2
    assert res.worst_case is not None and res.worst_case.overload_count == 0
    assert res.candidates == len(enumerate_segmentations(fleet))

    relaxed = brute_force_defense(grid, mats, fleet, dispatch, gains, params, 1)
    assert relaxed.feasible and relaxed.segments_used == 1


def test_brute_force_tries_cheapest_first():
    grid, mats, _, dispatch, gains = star_env()
    fleet = single_op_fleet({"1": 30.0}, d=2)
    seen = []

    def fake(seg):
        seen.append(seg.segments_used_count())
        return SimpleNamespace(overload_count=0)

    res = brute_force_defense(grid, mats, fleet, dispatch, gains, make_params(),
                              0, solve_fn=fake)
    # the very first candidate is already safe and it is the cheapest one
    assert seen == [1]
    assert res.feasible and res.segments_used == 1


def test_brute_force_infeasible():
    grid, mats, fleet, dispatch, gains = star_env(rating=60.0)
    fleet_d1 = single_op_fleet({"1": 30.0}, d=1)

    def always_bad(seg):
        return SimpleNamespace(overload_count=2)

    res = brute_force_defense(grid, mats, fleet_d1, dispatch, gains,
                              make_params(), 1, solve_fn=always_bad)
    assert not res.feasible
    assert res.segmentation is None and res.worst_case is None
