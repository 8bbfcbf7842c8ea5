import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ring3, single_op_fleet
from gridseg.errors import ParseError
from gridseg.fleet import (REST_OPERATOR_ID, FleetModel, Operator, Segmentation,
                           build_fleet, load_fleet_csv, load_segmentation_json,
                           maximal_segmentation, minimal_segmentation,
                           nearest_connection_bus, save_segmentation_json,
                           validate_segmentation)


def test_operator_basics():
    op = Operator("o", {"2": 12.0, "10": 5.0})
    assert op.total_capacity() == pytest.approx(17.0)
    # numeric bus ids sort numerically
    assert op.capacity_buses() == ("2", "10")


def test_build_fleet_aggregates_and_pools_smallest():
    rows = [
        {"operator_id": "big", "bus_id": "1", "capacity_mw": "30"},
        {"operator_id": "big", "bus_id": "1", "capacity_mw": "20"},
        {"operator_id": "mid", "bus_id": "2", "capacity_mw": "25"},
        {"operator_id": "tiny1", "bus_id": "1", "capacity_mw": "2"},
        {"operator_id": "tiny2", "bus_id": "2", "capacity_mw": "1"},
    ]
    fleet = build_fleet(rows, discretization=1, top_n_hackable=2)
    by_id = {o.id: o for o in fleet.operators}
    assert by_id["big"].capacity == {"1": 50.0}
    assert by_id["big"].hackable and by_id["mid"].hackable
    rest = by_id[REST_OPERATOR_ID]
    assert not rest.hackable
    assert rest.total_capacity() == pytest.approx(3.0)
    assert fleet.total_capacity() == pytest.approx(78.0)
    assert {o.id for o in fleet.hackable_operators()} == {"big", "mid"}


def test_nearest_connection_bus_prefers_distribution_connected():
    from gridseg.grid import Bus, Branch, Generator, GridCase
    grid = GridCase(
        buses=(Bus("1", 10.0, lat=50.0, lon=8.0, dist_grid_connected=True),
               Bus("2", 10.0, lat=50.0, lon=8.01, dist_grid_connected=False),
               Bus("3", 10.0, lat=50.3, lon=8.0, dist_grid_connected=True)),
        branches=(Branch("a", "1", "2", 1.0, 100.0, 100.0),
                  Branch("b", "2", "3", 1.0, 100.0, 100.0)),
        generators=(Generator("g", "1", 0.0, 100.0, 1.0),),
    )
    # bus 2 is closest but not distribution-connected
    assert nearest_connection_bus(grid, 50.0, 8.012) == "1"
    assert nearest_connection_bus(grid, 50.29, 8.0) == "3"


def test_fleet_csv_round_trip_aggregated(tmp_path):
    p = tmp_path / "fleet.csv"
    p.write_text("operator_id,bus_id,capacity_mw\na,1,10\na,2,5\nb,1,3\n")
    fleet = load_fleet_csv(str(p), discretization=2)
    assert {o.id: o.capacity for o in fleet.operators} == {
        "a": {"1": 10.0, "2": 5.0}, "b": {"1": 3.0}}
    assert fleet.discretization == 2


def test_fleet_csv_geocoded_format(tmp_path):
    from gridseg.grid import Bus, Branch, Generator, GridCase
    grid = GridCase(
        buses=(Bus("1", 10.0, lat=50.0, lon=8.0, dist_grid_connected=True),
               Bus("2", 10.0, lat=51.0, lon=9.0, dist_grid_connected=True)),
        branches=(Branch("a", "1", "2", 1.0, 100.0, 100.0),),
        generators=(Generator("g", "1", 0.0, 100.0, 1.0),),
    )
    p = tmp_path / "raw.csv"
    p.write_text("operator_id,lat,lon,capacity_kw\nx,50.01,8.0,1500\nx,50.99,9.0,500\n")
    fleet = load_fleet_csv(str(p), discretization=1, grid=grid)
    op = fleet.operator("x")
    assert op.capacity == {"1": 1.5, "2": 0.5}


def test_fleet_csv_bad_header(tmp_path):
    p = tmp_path / "junk.csv"
    p.write_text("foo,bar\n1,2\n")
    with pytest.raises(ParseError):
        load_fleet_csv(str(p), discretization=1)


def test_minimal_and_maximal_segmentations():
    fleet = FleetModel(
        operators=(Operator("a", {"1": 10.0, "2": 10.0}),
                   Operator("b", {"3": 7.0})),
        discretization=2,
    )
    mini = minimal_segmentation(fleet)
    assert mini.segments_used_count() == 2
    assert mini.fraction("a", "1", 1) == 1.0
    assert validate_segmentation(fleet, mini) == []

    maxi = maximal_segmentation(fleet)
    assert validate_segmentation(fleet, maxi) == []
    # every used segment of the finest split carries at most one 1/D share per bus
    for (op, bus, s), num in maxi.assignments.items():
        assert num <= 1
    assert maxi.segments_used_count() >= mini.segments_used_count()


def test_coverage_and_fraction_arithmetic():
    seg = Segmentation(
        d=4,
        assignments={("o", "1", 1): 3, ("o", "1", 2): 1},
        used={("o", 1): True, ("o", 2): True},
    )
    assert seg.fraction("o", "1", 1) == pytest.approx(0.75)
    assert seg.fraction("o", "1", 2) == pytest.approx(0.25)
    assert seg.fraction("o", "1", 3) == 0.0
    assert seg.coverage("o", "1", [1, 2]) == pytest.approx(1.0)
    assert seg.used_segments("o") == (1, 2)


def test_validate_segmentation_catalogue():
    fleet = FleetModel(operators=(Operator("a", {"1": 10.0}),), discretization=2)

    # wrong denominator
    seg = Segmentation(d=3, assignments={("a", "1", 1): 3}, used={("a", 1): True})
    assert any(v.constraint == "grid-denominator-mismatch"
               for v in validate_segmentation(fleet, seg))

    # unknown operator
    seg = Segmentation(d=2, assignments={("zz", "1", 1): 2},
                       used={("zz", 1): True, ("a", 1): True})
    kinds = {v.constraint for v in validate_segmentation(fleet, seg)}
    assert "unknown-operator" in kinds

    # capacity not fully assigned
    seg = Segmentation(d=2, assignments={("a", "1", 1): 1}, used={("a", 1): True})
    kinds = {v.constraint for v in validate_segmentation(fleet, seg)}
    assert "capacity-not-fully-assigned" in kinds

    # assignment on unused segment
    seg = Segmentation(d=2, assignments={("a", "1", 1): 1, ("a", "1", 2): 1},
                       used={("a", 1): True})
    kinds = {v.constraint for v in validate_segmentation(fleet, seg)}
    assert "assignment-on-unused-segment" in kinds

    # non-contiguous used segments
    seg = Segmentation(d=2, assignments={("a", "1", 1): 1, ("a", "1", 3): 1},
                       used={("a", 1): True, ("a", 3): True})
    kinds = {v.constraint for v in validate_segmentation(fleet, seg)}
    assert "used-segments-not-contiguous" in kinds


def test_canonical_key_ignores_segment_labels():
    a = Segmentation(
        d=2,
        assignments={("o", "1", 1): 2, ("o", "2", 1): 1, ("o", "2", 2): 1},
        used={("o", 1): True, ("o", 2): True},
    )
    b = Segmentation(
        d=2,
        assignments={("o", "1", 2): 2, ("o", "2", 2): 1, ("o", "2", 1): 1},
        used={("o", 1): True, ("o", 2): True},
    )
    assert a.canonical_key() == b.canonical_key()
    c = Segmentation(
        d=2,
        assignments={("o", "1", 1): 1, ("o", "1", 2): 1, ("o", "2", 1): 1,
                     ("o", "2", 2): 1},
        used={("o", 1): True, ("o", 2): True},
    )
    assert a.canonical_key() != c.canonical_key()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=3), min_size=2, max_size=4),
       st.permutations(range(4)))
def test_canonical_key_invariant_under_relabel(nums, perm):
    # distribute D=3 over up to 4 segments for two buses, then relabel
    d = 3
    segs = list(range(1, len(nums) + 1))
    total = sum(nums)
    if total == 0:
        nums[0] = d
    # normalize to sum exactly d per bus
    scale = [n for n in nums]
    while sum(scale) > d:
        for i in range(len(scale)):
            if scale[i] > 0 and sum(scale) > d:
                scale[i] -= 1
    while sum(scale) < d:
        scale[0] += 1
    asg = {}
    used = {}
    for s, n in zip(segs, scale):
        used[("o", s)] = True
        if n:
            asg[("o", "1", s)] = n
            asg[("o", "2", s)] = n
    base = Segmentation(d=d, assignments=asg, used=used)

    mapping = {s: segs[perm[i] % len(segs)] for i, s in enumerate(segs)}
    if len(set(mapping.values())) != len(segs):
        return  # not a bijection on this draw
    asg2 = {(o, b, mapping[s]): v for (o, b, s), v in asg.items()}
    used2 = {(o, mapping[s]): v for (o, s), v in used.items()}
    relabeled = Segmentation(d=d, assignments=asg2, used=used2)
    assert base.canonical_key() == relabeled.canonical_key()


def test_segmentation_json_round_trip(tmp_path):
    fleet = FleetModel(operators=(Operator("a", {"1": 10.0, "2": 4.0}),),
                       discretization=2)
    seg = maximal_segmentation(fleet)
    p = tmp_path / "seg.json"
    save_segmentation_json(seg, str(p))
    again = load_segmentation_json(str(p))
    assert again.d == seg.d
    assert again.assignments == seg.assignments
    assert again.used == seg.used


def test_max_segments_default():
    fleet = FleetModel(
        operators=(Operator("a", {"1": 10.0, "2": 4.0}),
                   Operator("b", {"3": 5.0}, max_segments=1)),
        discretization=3,
    )
    assert fleet.max_segments(fleet.operator("a")) == 6
    assert fleet.max_segments(fleet.operator("b")) == 1
