"""Solver-agnostic LP/MILP layer.

Models are assembled as named variables plus named linear constraints and
handed to a backend (scipy's HiGHS interface by default, selectable through
the GRIDSEG_SOLVER environment variable).  Every solution coming back from a
backend is re-checked against the model by an independent evaluator before it
is returned; a violation beyond tolerance is a defect, not a condition the
caller is expected to handle.
"""

from __future__ import annotations

import itertools
import math
import os
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, milp

from .errors import (
    BackendUnavailable,
    MalformedModel,
    SolutionIntegrityError,
    SolverFailure,
)

CONTINUOUS = "continuous"
BINARY = "binary"
INTEGER = "integer"

#: default relative MIP gap at which a solve is considered proven
DEFAULT_GAP = 1e-6
#: absolute feasibility tolerance used by the replay evaluator
FEASIBILITY_TOL = 1e-7
#: how far an integer variable may sit from an integer before we call it a defect
INTEGRALITY_TOL = 1e-5


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str
    lower: float
    upper: float


@dataclass(frozen=True)
class Constraint:
    name: str
    terms: tuple[tuple[int, float], ...]  # (column index, coefficient)
    sense: str  # one of "<=", ">=", "=="
    rhs: float


class ModelSpec:
    """Builder for a linear model with named rows and columns.

    Insertion order is preserved on both axes, so building the same model
    twice yields byte-identical solver input (determinism of results then
    rests on the backend, which is single-threaded here).
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective_sense: str = "min"
        self.objective: tuple[tuple[int, float], ...] = ()
        self._vidx: dict[str, int] = {}
        self._cnames: set[str] = set()

    # -- construction -----------------------------------------------------

    def add_variable(self, name: str, *, kind: str = CONTINUOUS,
                     lower: float = 0.0, upper: float = math.inf) -> str:
        if name in self._vidx:
            raise MalformedModel(f"duplicate variable {name!r}")
        if kind not in (CONTINUOUS, BINARY, INTEGER):
            raise MalformedModel(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            lower, upper = 0.0, 1.0
        if kind != CONTINUOUS and not (math.isfinite(lower) and math.isfinite(upper)):
            raise MalformedModel(f"integer variable {name!r} needs finite bounds")
        if lower > upper:
            raise MalformedModel(f"variable {name!r} has lower > upper")
        self._vidx[name] = len(self.variables)
        self.variables.append(Variable(name, kind, float(lower), float(upper)))
        return name

    def add_constraint(self, name: str, terms: Iterable[tuple[str, float]],
                       sense: str, rhs: float) -> str:
        if name in self._cnames:
            raise MalformedModel(f"duplicate constraint {name!r}")
        if sense not in ("<=", ">=", "=="):
            raise MalformedModel(f"unknown sense {sense!r} in {name!r}")
        resolved = []
        for var, coef in terms:
            if var not in self._vidx:
                raise MalformedModel(f"constraint {name!r} references unknown variable {var!r}")
            if coef != 0.0:
                resolved.append((self._vidx[var], float(coef)))
        self._cnames.add(name)
        self.constraints.append(Constraint(name, tuple(resolved), sense, float(rhs)))
        return name

    def set_objective(self, sense: str, terms: Iterable[tuple[str, float]]) -> None:
        if sense not in ("min", "max"):
            raise MalformedModel(f"objective sense must be min/max, got {sense!r}")
        resolved = []
        for var, coef in terms:
            if var not in self._vidx:
                raise MalformedModel(f"objective references unknown variable {var!r}")
            if coef != 0.0:
                resolved.append((self._vidx[var], float(coef)))
        self.objective_sense = sense
        self.objective = tuple(resolved)

    # -- introspection ----------------------------------------------------

    def variable_index(self, name: str) -> int:
        return self._vidx[name]

    def has_variable(self, name: str) -> bool:
        return name in self._vidx

    @property
    def num_variables(self) -> int:
        return len(self.variables)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(len(self.variables))
        for j, coef in self.objective:
            c[j] += coef
        return c


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    GAP_LIMIT = "gap_limit"
    TIME_LIMIT = "time_limit"


@dataclass
class SolveResult:
    status: SolveStatus
    objective_value: float | None
    values: dict[str, float] | None
    gap: float | None
    runtime: float

    def value(self, name: str) -> float:
        assert self.values is not None, "no incumbent available"
        return self.values[name]


def evaluate_solution(model: ModelSpec, values: Mapping[str, float],
                      tol: float = FEASIBILITY_TOL) -> list[str]:
    """Independently re-check a candidate point against every model row.

    Returns human-readable violation descriptions (empty = feasible within
    tol, scaled by the row magnitude).  Shared by the post-solve replay and
    by tests that want to audit solutions from other sources.
    """
    x = np.empty(len(model.variables))
    for i, v in enumerate(model.variables):
        try:
            x[i] = values[v.name]
        except KeyError:
            return [f"missing value for variable {v.name!r}"]
    bad: list[str] = []
    for i, v in enumerate(model.variables):
        scale = max(1.0, abs(x[i]))
        if x[i] < v.lower - tol * scale or x[i] > v.upper + tol * scale:
            bad.append(f"variable {v.name}={x[i]!r} outside [{v.lower}, {v.upper}]")
        if v.kind != CONTINUOUS and abs(x[i] - round(x[i])) > INTEGRALITY_TOL:
            bad.append(f"variable {v.name}={x[i]!r} is not integral")
    for con in model.constraints:
        lhs = sum(coef * x[j] for j, coef in con.terms)
        scale = max(1.0, abs(con.rhs), abs(lhs))
        viol = 0.0
        if con.sense == "<=":
            viol = lhs - con.rhs
        elif con.sense == ">=":
            viol = con.rhs - lhs
        else:
            viol = abs(lhs - con.rhs)
        if viol > tol * scale:
            bad.append(f"constraint {con.name}: lhs={lhs!r} {con.sense} rhs={con.rhs!r}")
    return bad


def _build_arrays(model: ModelSpec):
    n = len(model.variables)
    lb = np.array([v.lower for v in model.variables])
    ub = np.array([v.upper for v in model.variables])
    integrality = np.array(
        [0 if v.kind == CONTINUOUS else 1 for v in model.variables], dtype=np.uint8
    )
    c = model.objective_vector()
    if model.objective_sense == "max":
        c = -c

    rows, cols, data = [], [], []
    clb = np.empty(len(model.constraints))
    cub = np.empty(len(model.constraints))
    for i, con in enumerate(model.constraints):
        for j, coef in con.terms:
            rows.append(i)
            cols.append(j)
            data.append(coef)
        if con.sense == "<=":
            clb[i], cub[i] = -np.inf, con.rhs
        elif con.sense == ">=":
            clb[i], cub[i] = con.rhs, np.inf
        else:
            clb[i], cub[i] = con.rhs, con.rhs
    a = sp.csr_matrix((data, (rows, cols)), shape=(len(model.constraints), n))
    return c, a, clb, cub, lb, ub, integrality


def _solve_highs(model: ModelSpec, gap: float, time_limit: float | None) -> SolveResult:
    t0 = time.perf_counter()
    if not model.variables:
        # degenerate but legal: nothing to decide
        return SolveResult(SolveStatus.OPTIMAL, 0.0, {}, 0.0, time.perf_counter() - t0)
    c, a, clb, cub, lb, ub, integrality = _build_arrays(model)
    options: dict = {"mip_rel_gap": gap}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    res = milp(
        c=c,
        constraints=LinearConstraint(a, clb, cub) if model.constraints else None,
        bounds=Bounds(lb, ub),
        integrality=integrality,
        options=options,
    )
    runtime = time.perf_counter() - t0

    if res.status == 2:
        return SolveResult(SolveStatus.INFEASIBLE, None, None, None, runtime)
    if res.status == 3:
        return SolveResult(SolveStatus.UNBOUNDED, None, None, None, runtime)
    if res.status == 1:
        if res.x is None:
            return SolveResult(SolveStatus.TIME_LIMIT, None, None, None, runtime)
        status = SolveStatus.TIME_LIMIT
    elif res.status == 0:
        status = SolveStatus.OPTIMAL
    else:
        raise SolverFailure(f"highs terminated abnormally on {model.name!r}: {res.message}")

    raw = {v.name: float(res.x[i]) for i, v in enumerate(model.variables)}
    # verify the solver's own claim before rounding anything
    bad = evaluate_solution(model, raw, tol=1e-6)
    if bad:
        raise SolutionIntegrityError(
            f"solution of {model.name!r} failed replay: " + "; ".join(bad[:5])
        )
    values: dict[str, float] = {}
    for i, v in enumerate(model.variables):
        xi = float(res.x[i])
        if v.kind != CONTINUOUS:
            xi = float(round(xi))
        values[v.name] = xi
    obj = sum(coef * values[model.variables[j].name] for j, coef in model.objective)
    mip_gap = getattr(res, "mip_gap", None)
    if mip_gap is None or not math.isfinite(mip_gap):
        mip_gap = 0.0
    return SolveResult(status, float(obj), values, float(mip_gap), runtime)


_BACKENDS: dict[str, Callable[[ModelSpec, float, float | None], SolveResult]] = {
    "highs": _solve_highs,
}

_DUMP_DIR: str | None = None
_dump_counter = itertools.count()


def set_dump_dir(path: str | None) -> None:
    """Write every subsequently solved model to `path` as LP text (None turns it off)."""
    global _DUMP_DIR
    _DUMP_DIR = path


def solve(model: ModelSpec, *, gap: float = DEFAULT_GAP,
          time_limit: float | None = None, backend: str | None = None) -> SolveResult:
    """Solve a model; backend chosen by argument, then GRIDSEG_SOLVER, then highs."""
    name = backend or os.environ.get("GRIDSEG_SOLVER", "highs")
    try:
        fn = _BACKENDS[name.lower()]
    except KeyError:
        raise BackendUnavailable(
            f"solver backend {name!r} is not registered (available: {sorted(_BACKENDS)})"
        ) from None
    if _DUMP_DIR is not None:
        write_lp(model, os.path.join(_DUMP_DIR, f"{model.name}_{next(_dump_counter):04d}.lp"))
    return fn(model, gap, time_limit)


def write_lp(model: ModelSpec, path: str) -> None:
    """Dump the model in LP text format (for debugging, --dump-lp)."""

    def term_str(terms) -> str:
        parts = []
        for j, coef in terms:
            name = model.variables[j].name
            sign = "-" if coef < 0 else "+"
            parts.append(f"{sign} {abs(coef):.17g} {name}")
        if not parts:
            return "0"
        return " ".join(parts).lstrip("+ ")

    lines = [f"\\ {model.name}"]
    lines.append("Minimize" if model.objective_sense == "min" else "Maximize")
    lines.append(" obj: " + term_str(model.objective))
    lines.append("Subject To")
    for con in model.constraints:
        op = {"<=": "<=", ">=": ">=", "==": "="}[con.sense]
        lines.append(f" {con.name}: {term_str(con.terms)} {op} {con.rhs:.17g}")
    lines.append("Bounds")
    for v in model.variables:
        lo = "-inf" if v.lower == -math.inf else f"{v.lower:.17g}"
        hi = "+inf" if v.upper == math.inf else f"{v.upper:.17g}"
        lines.append(f" {lo} <= {v.name} <= {hi}")
    general = [v.name for v in model.variables if v.kind == INTEGER]
    binaries = [v.name for v in model.variables if v.kind == BINARY]
    if general:
        lines.append("General")
        lines.append(" " + " ".join(general))
    if binaries:
        lines.append("Binary")
        lines.append(" " + " ".join(binaries))
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
