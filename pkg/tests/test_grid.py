import json
import math

import numpy as np
import pytest

from conftest import ring3
from gridseg.errors import (InfeasibleDispatch, ParseError, SingularNetwork,
                            UnbalancedInjections, ZeroFcr)
from gridseg.grid import (Branch, Bus, Generator, GridCase,
                          build_network_matrices, dc_power_flow,
                          dispatch_flows, economic_dispatch,
                          electrical_distances, fcr_gains_from_dispatch,
                          grid_from_dict, grid_to_dict, load_grid_json,
                          save_grid_json)


# unit-susceptance ring: B_reduced = [[2,-1],[-1,2]], inverse = [[2,1],[1,2]]/3
def test_ring_reduced_inverse():
    mats = build_network_matrices(ring3())
    expect = np.array([[2.0, 1.0], [1.0, 2.0]]) / 3.0
    np.testing.assert_allclose(mats.reduced_bus_susceptance_inverse, expect,
                               atol=1e-12)


def test_ring_flow_split():
    # +90 at bus 1, -90 at bus 2: 60 MW direct, 30 MW around the long way
    grid = ring3()
    mats = build_network_matrices(grid)
    # branch orientation: l23 runs 2->3, the long-way power goes 3->2
    flows, theta = dc_power_flow(mats, np.array([90.0, -90.0, 0.0]))
    np.testing.assert_allclose(flows, [60.0, 30.0, -30.0], atol=1e-9)
    assert theta[mats.reference_index] == 0.0


def test_flow_linearity_and_sign():
    grid = ring3()
    mats = build_network_matrices(grid)
    f1, _ = dc_power_flow(mats, np.array([30.0, -30.0, 0.0]))
    f2, _ = dc_power_flow(mats, np.array([90.0, -90.0, 0.0]))
    np.testing.assert_allclose(3.0 * f1, f2, atol=1e-9)
    back, _ = dc_power_flow(mats, np.array([-30.0, 30.0, 0.0]))
    np.testing.assert_allclose(back, -f1, atol=1e-12)


def test_unbalanced_injections_rejected():
    mats = build_network_matrices(ring3())
    with pytest.raises(UnbalancedInjections):
        dc_power_flow(mats, np.array([50.0, -30.0, 0.0]))
    with pytest.raises(ValueError):
        dc_power_flow(mats, np.array([50.0, -50.0]))


def test_disconnected_network_rejected():
    grid = GridCase(
        buses=(Bus("1", 0.0), Bus("2", 10.0), Bus("3", 10.0), Bus("4", 0.0)),
        branches=(Branch("a", "1", "2", 1.0, 50.0, 50.0),
                  Branch("b", "3", "4", 1.0, 50.0, 50.0)),
        generators=(Generator("g", "1", 0.0, 100.0, 1.0),
                    Generator("g2", "3", 0.0, 100.0, 1.0)),
    )
    with pytest.raises(SingularNetwork):
        build_network_matrices(grid)


def test_electrical_distance_ring():
    # unit ring: adjacent pairs are 2/3 apart, self-distance 0
    grid = ring3()
    mats = build_network_matrices(grid)
    dist = electrical_distances(mats)
    i, j = 0, 1
    assert dist[i, j] == pytest.approx(2.0 / 3.0)
    assert dist[0, 0] == pytest.approx(0.0)
    np.testing.assert_allclose(dist, dist.T, atol=1e-12)


def test_two_bus_dispatch_merit_order_with_congestion():
    # cheap unit capped by the 30 MW line, dear local unit covers the rest
    grid = GridCase(
        buses=(Bus("1", 0.0), Bus("2", 50.0)),
        branches=(Branch("l", "1", "2", 10.0, 30.0, 30.0),),
        generators=(Generator("cheap", "1", 0.0, 100.0, 5.0),
                    Generator("dear", "2", 0.0, 100.0, 50.0)),
    )
    disp = economic_dispatch(grid, {"1": 0.0, "2": 50.0})
    assert disp["cheap"] == pytest.approx(30.0)
    assert disp["dear"] == pytest.approx(20.0)
    flows = dispatch_flows(grid, build_network_matrices(grid), disp,
                           {"1": 0.0, "2": 50.0})
    assert flows["l"] == pytest.approx(30.0)


def test_dispatch_availability_scales_capacity():
    grid = ring3()
    disp = economic_dispatch(grid, {"1": 0.0, "2": 90.0, "3": 0.0})
    assert disp["g1"] == pytest.approx(90.0)
    derated = GridCase(
        buses=grid.buses, branches=grid.branches,
        generators=(Generator("g1", "1", 0.0, 500.0, 10.0, availability=0.1),
                    grid.generators[1]),
    )
    disp2 = economic_dispatch(derated, {"1": 0.0, "2": 90.0, "3": 0.0})
    assert disp2["g1"] == pytest.approx(50.0)
    assert disp2["g3"] == pytest.approx(40.0)


def test_dispatch_infeasible_when_capacity_short():
    grid = GridCase(
        buses=(Bus("1", 0.0), Bus("2", 100.0)),
        branches=(Branch("l", "1", "2", 10.0, 120.0, 120.0),),
        generators=(Generator("g", "1", 0.0, 60.0, 5.0),),
    )
    with pytest.raises(InfeasibleDispatch):
        economic_dispatch(grid, {"1": 0.0, "2": 100.0})


def test_fcr_gains_follow_dispatch():
    gains = fcr_gains_from_dispatch({"a": 30.0, "b": 0.0, "c": 70.0})
    assert gains == {"a": 30.0, "b": 0.0, "c": 70.0}
    with pytest.raises(ZeroFcr):
        fcr_gains_from_dispatch({"a": 0.0, "b": 0.0})


def test_reference_bus_defaults_to_lowest_generator_bus():
    grid = ring3()
    assert grid.effective_reference_bus() == "1"
    pinned = GridCase(buses=grid.buses, branches=grid.branches,
                      generators=grid.generators, reference_bus="3")
    assert pinned.effective_reference_bus() == "3"


def test_validation_rejects_bad_references_and_ranges():
    buses = (Bus("1", 0.0), Bus("2", 10.0))
    gen = Generator("g", "1", 0.0, 100.0, 1.0)

    def case(branches=(), generators=(gen,), **kw):
        return GridCase(buses=buses, branches=tuple(branches),
                        generators=tuple(generators), **kw)

    with pytest.raises(ParseError):  # branch to unknown bus
        case([Branch("l", "1", "9", 1.0, 10.0, 10.0)])
    with pytest.raises(ParseError):  # negative rating
        case([Branch("l", "1", "2", 1.0, -5.0, 10.0)])
    with pytest.raises(ParseError):  # threshold below rating
        case([Branch("l", "1", "2", 1.0, 20.0, 10.0)])
    with pytest.raises(ParseError):  # self loop
        case([Branch("l", "1", "1", 1.0, 10.0, 10.0)])
    with pytest.raises(ParseError):  # p_max < p_min
        case(generators=[Generator("g", "1", 5.0, 2.0, 1.0)])
    with pytest.raises(ParseError):  # availability out of range
        case(generators=[Generator("g", "1", 0.0, 10.0, 1.0, availability=1.5)])
    with pytest.raises(ParseError):  # unknown reference bus
        case([Branch("l", "1", "2", 1.0, 10.0, 10.0)], reference_bus="7")
    with pytest.raises(ParseError):  # duplicate bus ids
        GridCase(buses=(Bus("1", 0.0), Bus("1", 1.0)), branches=(),
                 generators=(gen,))


def test_grid_json_round_trip(tmp_path):
    grid = ring3()
    path = tmp_path / "case.json"
    save_grid_json(grid, str(path))
    again = load_grid_json(str(path))
    assert again == grid
    assert grid_from_dict(grid_to_dict(grid)) == grid


def test_grid_json_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"buses": "nope"}))
    with pytest.raises(ParseError):
        load_grid_json(str(path))
