"""Bundled example datasets.

Ships a single-area 24-bus reliability test system (the classic IEEE
24-bus network: 38 branches, 32 generating units plus one synchronous
condenser, 2850 MW of peak load) together with a synthetic fleet of
EV charging stations and a ready-to-run study configuration.

The charging-station fleet holds 10% of system peak (285 MW) as fifteen
19 MW stations on distribution-connected load buses, grouped three per
operator into five operators.  The study configuration reproduces a
stressed-grid setting: branch ratings scaled to 65%, overload threshold
at 102% of the scaled rating, two compromised operators, 20% baseline
coincidence, and no vehicle-to-grid capability.  Under this setup the
unsegmented worst-case attack overloads exactly two branches, and an
exact defense at discretization 2 needs six segments (one operator
split in half).
"""

from __future__ import annotations

import json
from importlib import resources

from .fleet import FleetModel, load_fleet_csv
from .grid import GridCase, grid_from_dict
from .io import RunConfig, config_from_dict

CASE_RESOURCE = "ieee_rts24_case.json"
EVCS_RESOURCE = "ieee_rts24_evcs.csv"
CONFIG_RESOURCE = "ieee_rts24_config.json"


def _data_text(name: str) -> str:
    return resources.files("gridseg.data").joinpath(name).read_text()


def rts24_case() -> GridCase:
    """The bundled 24-bus test case, at nominal (unscaled) ratings."""
    return grid_from_dict(json.loads(_data_text(CASE_RESOURCE)))


def rts24_config() -> RunConfig:
    """Study configuration: stressed ratings, 2-operator compromise."""
    return config_from_dict(json.loads(_data_text(CONFIG_RESOURCE)))


def rts24_fleet(discretization: int = 2, *, grid: GridCase | None = None,
                top_n_hackable: int = 20) -> FleetModel:
    """The bundled charging-station fleet aggregated per (operator, bus)."""
    if grid is None:
        grid = rts24_case()
    src = resources.files("gridseg.data").joinpath(EVCS_RESOURCE)
    with resources.as_file(src) as path:
        return load_fleet_csv(str(path), discretization=discretization,
                              grid=grid, top_n_hackable=top_n_hackable)
