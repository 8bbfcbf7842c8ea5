"""The JSON Schemas in docs/ must accept what the package reads and writes."""

import csv
import json
import os
import subprocess
import sys

import pytest

jsonschema = pytest.importorskip("jsonschema")

HERE = os.path.dirname(__file__)
ROOT = os.path.dirname(HERE)
SCHEMA_DIR = os.path.join(ROOT, "docs", "schemas")
DATA_DIR = os.path.join(ROOT, "src", "gridseg", "data")


def schema(name):
    with open(os.path.join(SCHEMA_DIR, name)) as fh:
        doc = json.load(fh)
    jsonschema.Draft202012Validator.check_schema(doc)
    return doc


def validate(doc, schema_name):
    jsonschema.Draft202012Validator(schema(schema_name)).validate(doc)


def test_bundled_case_matches_schema():
    with open(os.path.join(DATA_DIR, "ieee_rts24_case.json")) as fh:
        validate(json.load(fh), "grid-case.schema.json")


def test_bundled_config_matches_schema():
    with open(os.path.join(DATA_DIR, "ieee_rts24_config.json")) as fh:
        validate(json.load(fh), "run-config.schema.json")


def test_bundled_fleet_rows_match_schema():
    sch = schema("fleet-csv.schema.json")
    with open(os.path.join(DATA_DIR, "ieee_rts24_evcs.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    for row in rows:
        typed = {"operator_id": row["operator_id"], "bus_id": row["bus_id"],
                 "capacity_mw": float(row["capacity_mw"])}
        jsonschema.Draft202012Validator(sch).validate(typed)


def test_cli_outputs_match_schemas(tmp_path):
    out = tmp_path / "run"
    cmd = [sys.executable, "-m", "gridseg", "defend", "ccg",
           "--case", os.path.join(DATA_DIR, "ieee_rts24_case.json"),
           "--fleet", os.path.join(DATA_DIR, "ieee_rts24_evcs.csv"),
           "--config", os.path.join(DATA_DIR, "ieee_rts24_config.json"),
           "--out-dir", str(out)]
    proc = subprocess.run(cmd, capture_output=True, text=True, timeout=600)
    assert proc.returncode == 0, proc.stderr
    with open(out / "report.json") as fh:
        report = json.load(fh)
    validate(report, "report.schema.json")
    assert report["command"] == "defend"
    with open(out / "segmentation_stressed_peak.json") as fh:
        validate(json.load(fh), "segmentation.schema.json")


def test_written_grid_round_trips_through_schema(tmp_path):
    from gridseg.grid import load_grid_json, save_grid_json

    grid = load_grid_json(os.path.join(DATA_DIR, "ieee_rts24_case.json"))
    path = tmp_path / "case.json"
    save_grid_json(grid, str(path))
    with open(path) as fh:
        validate(json.load(fh), "grid-case.schema.json")
