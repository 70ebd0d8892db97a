"""Solver-agnostic MILP description and backend dispatch.

Every optimization in the package (fleet bands, SOC interval estimation,
the robust evaluator, dispatch) is declared as an :class:`OptModel` and
handed to :func:`solve`. Backends are looked up by name in
:data:`BACKENDS`; the default ``"highs"`` backend wraps
:func:`scipy.optimize.milp`.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-6
INT_TOL = 1e-5
MIP_REL_GAP = 1e-6

INF = math.inf


class ModelError(ValueError):
    """Malformed model declaration (duplicate name, unknown variable, bad bounds)."""


class BackendUnavailable(RuntimeError):
    """Requested solver backend is not installed or not registered."""


class VarKind(str, Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class Sense(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class ObjSense(str, Enum):
    MIN = "min"
    MAX = "max"


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    LIMIT_HIT = "limit-hit"


class VarDef(NamedTuple):
    name: str
    kind: VarKind = VarKind.CONTINUOUS
    lower: float = 0.0
    upper: float = INF


class Var(NamedTuple):
    """Handle returned by :meth:`OptModel.add_var`; hashable, usable as a coefficient key."""

    index: int
    name: str
    model_id: int

    def __repr__(self) -> str:
        return f"Var({self.name})"


class Constraint(NamedTuple):
    coeffs: Tuple[Tuple[int, float], ...]
    sense: Sense
    rhs: float
    name: str


class OptModel:
    """Accumulates variables, linear constraints and a linear objective."""

    def __init__(self, name: str = "model") -> None:
        self.name = name
        self.variables: List[VarDef] = []
        self.constraints: List[Constraint] = []
        self.objective: Dict[int, float] = {}
        self.objective_constant = 0.0
        self.objective_sense = ObjSense.MIN
        self._names: Dict[str, int] = {}
        self._handles: List[Var] = []
        self._id = id(self)

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    @property
    def num_binaries(self) -> int:
        return sum(v.kind is VarKind.BINARY for v in self.variables)

    def add_var(
        self,
        name: str | VarDef,
        kind: VarKind | str = VarKind.CONTINUOUS,
        lower: float = 0.0,
        upper: float = INF,
    ) -> Var:
        if isinstance(name, VarDef):
            name, kind, lower, upper = name.name, name.kind, name.lower, name.upper
        if kind is not VarKind.CONTINUOUS:
            kind = VarKind(kind)
            if kind is VarKind.BINARY:
                lower, upper = 0.0, 1.0
        if name in self._names:
            raise ModelError(f"duplicate variable name {name!r}")
        if not lower <= upper:  # also rejects NaN
            raise ModelError(f"invalid bounds for {name!r}: [{lower}, {upper}]")
        index = len(self.variables)
        handle = Var(index, name, self._id)
        self.variables.append(VarDef(name, kind, float(lower), float(upper)))
        self._names[name] = index
        self._handles.append(handle)
        return handle

    def var(self, name: str) -> Var:
        try:
            return self._handles[self._names[name]]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def _resolve(self, coeffs: Mapping[Var, float]) -> Tuple[Tuple[int, float], ...]:
        merged: Dict[int, float] = {}
        mid = self._id
        for v, c in coeffs.items():
            if v.__class__ is not Var or v.model_id != mid:
                raise ModelError(f"unknown variable {v!r}")
            c = float(c)
            if c != c or c in (INF, -INF):
                raise ModelError(f"non-finite coefficient on {v.name}")
            i = v.index
            merged[i] = merged[i] + c if i in merged else c
        return tuple(merged.items())

    def add_constraint(
        self,
        coeffs: Mapping[Var, float],
        sense: Sense | str,
        rhs: float,
        name: Optional[str] = None,
    ) -> int:
        terms = self._resolve(coeffs)
        rhs = float(rhs)
        if rhs != rhs or rhs in (INF, -INF):
            raise ModelError("constraint right-hand side must be finite")
        if sense.__class__ is not Sense:
            sense = Sense(sense)
        self.constraints.append(Constraint(terms, sense, rhs, name or f"c{len(self.constraints)}"))
        return len(self.constraints) - 1

    def set_objective(
        self, coeffs: Mapping[Var, float], sense: ObjSense | str = ObjSense.MIN, constant: float = 0.0
    ) -> None:
        self.objective = dict(self._resolve(coeffs))
        self.objective_sense = ObjSense(sense)
        self.objective_constant = float(constant)

    # -- inspection helpers -------------------------------------------------

    def stats(self) -> Dict[str, int]:
        return {
            "vars": self.num_vars,
            "binaries": self.num_binaries,
            "constraints": self.num_constraints,
        }

    def max_violation(self, values: Mapping[str, float]) -> float:
        """Largest bound or constraint violation of ``values`` (0 when feasible)."""
        x = np.array([values[v.name] for v in self.variables], dtype=float)
        worst = 0.0
        for v, xi in zip(self.variables, x):
            worst = max(worst, v.lower - xi, xi - v.upper)
        for con in self.constraints:
            lhs = sum(c * x[i] for i, c in con.coeffs)
            if con.sense is Sense.LE:
                worst = max(worst, lhs - con.rhs)
            elif con.sense is Sense.GE:
                worst = max(worst, con.rhs - lhs)
            else:
                worst = max(worst, abs(lhs - con.rhs))
        return worst

    def to_lp_text(self) -> str:
        """Plain-text dump in the spirit of the CPLEX LP format."""

        def expr(terms) -> str:
            parts = []
            for i, c in terms:
                sign = "-" if c < 0 else "+"
                parts.append(f"{sign} {abs(c):.12g} {self.variables[i].name}")
            text = " ".join(parts) if parts else "0"
            return text[2:] if text.startswith("+ ") else text

        lines = [f"\\ model {self.name}"]
        lines.append("Minimize" if self.objective_sense is ObjSense.MIN else "Maximize")
        obj = expr(sorted(self.objective.items()))
        if self.objective_constant:
            obj += f" + {self.objective_constant:.12g} __const"
        lines.append(f" obj: {obj}")
        lines.append("Subject To")
        for con in self.constraints:
            lines.append(f" {con.name}: {expr(con.coeffs)} {con.sense.value} {con.rhs:.12g}")
        lines.append("Bounds")
        for v in self.variables:
            if v.kind is VarKind.BINARY:
                continue
            lo = "-inf" if v.lower == -INF else f"{v.lower:.12g}"
            hi = "+inf" if v.upper == INF else f"{v.upper:.12g}"
            lines.append(f" {lo} <= {v.name} <= {hi}")
        binaries = [v.name for v in self.variables if v.kind is VarKind.BINARY]
        if binaries:
            lines.append("Binaries")
            lines.extend(f" {n}" for n in binaries)
        lines.append("End")
        return "\n".join(lines) + "\n"

    def export_lp(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_lp_text())
        return path


@dataclass(frozen=True)
class SolverConfig:
    backend: str = "highs"
    time_limit: Optional[float] = None
    mip_rel_gap: float = MIP_REL_GAP
    feas_tol: float = FEAS_TOL
    int_tol: float = INT_TOL
    seed: int = 0
    export_dir: Optional[str] = None


@dataclass(frozen=True)
class SolveOutcome:
    status: Status
    objective: float
    values: Optional[Dict[str, float]]
    solve_time: float
    message: str = ""
    stats: Dict[str, int] = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def __getitem__(self, var: Var | str) -> float:
        if self.values is None:
            raise KeyError(f"no values available (status {self.status.value})")
        return self.values[var.name if isinstance(var, Var) else var]


class SolverError(RuntimeError):
    """Raised by callers that require an optimal outcome and did not get one."""

    def __init__(self, message: str, outcome: Optional[SolveOutcome] = None) -> None:
        super().__init__(message)
        self.outcome = outcome


def _matrices(model: OptModel):
    n = model.num_vars
    rows, cols, data = [], [], []
    lo, hi = [], []
    for r, con in enumerate(model.constraints):
        for i, c in con.coeffs:
            rows.append(r)
            cols.append(i)
            data.append(c)
        if con.sense is Sense.LE:
            lo.append(-np.inf)
            hi.append(con.rhs)
        elif con.sense is Sense.GE:
            lo.append(con.rhs)
            hi.append(np.inf)
        else:
            lo.append(con.rhs)
            hi.append(con.rhs)
    A = sparse.csr_array((data, (rows, cols)), shape=(model.num_constraints, n))
    return A, np.array(lo, dtype=float), np.array(hi, dtype=float)


def _solve_highs(model: OptModel, config: SolverConfig) -> SolveOutcome:
    n = model.num_vars
    stats = model.stats()
    sign = 1.0 if model.objective_sense is ObjSense.MIN else -1.0
    t0 = time.perf_counter()
    if n == 0:
        return SolveOutcome(Status.OPTIMAL, model.objective_constant, {}, 0.0, "empty model", stats)

    c = np.zeros(n)
    for i, coef in model.objective.items():
        c[i] = sign * coef
    integrality = np.array([v.kind is VarKind.BINARY for v in model.variables], dtype=np.uint8)
    bounds = Bounds(
        np.array([v.lower for v in model.variables], dtype=float),
        np.array([v.upper for v in model.variables], dtype=float),
    )
    constraints = []
    if model.num_constraints:
        A, lo, hi = _matrices(model)
        constraints.append(LinearConstraint(A, lo, hi))
    options = {"mip_rel_gap": config.mip_rel_gap, "presolve": True, "disp": False}
    if config.time_limit is not None:
        options["time_limit"] = float(config.time_limit)
    res = milp(c, integrality=integrality, bounds=bounds, constraints=constraints, options=options)
    elapsed = time.perf_counter() - t0

    if res.status == 0 and res.x is not None:
        x = np.asarray(res.x, dtype=float)
        values = {}
        for v, xi in zip(model.variables, x):
            if v.kind is VarKind.BINARY:
                r = round(xi)
                if abs(xi - r) > config.int_tol:
                    logger.warning("binary %s off-integral by %.2e", v.name, abs(xi - r))
                xi = float(r) if abs(xi - r) <= config.int_tol else xi
            values[v.name] = float(xi)
        objective = sum(coef * values[model.variables[i].name] for i, coef in model.objective.items())
        return SolveOutcome(
            Status.OPTIMAL, objective + model.objective_constant, values, elapsed, res.message, stats
        )
    if res.status == 1:
        status = Status.LIMIT_HIT
    elif res.status == 2:
        status = Status.INFEASIBLE
    elif res.status == 3:
        status = Status.UNBOUNDED
    else:
        # HiGHS reports "infeasible or unbounded" through the generic code.
        msg = (res.message or "").lower()
        status = Status.UNBOUNDED if "unbounded" in msg and "infeasible" not in msg else Status.INFEASIBLE
    return SolveOutcome(status, math.nan, None, elapsed, res.message, stats)


BACKENDS: Dict[str, Callable[[OptModel, SolverConfig], SolveOutcome]] = {
    "highs": _solve_highs,
}

_export_counter = 0


def solve(model: OptModel, config: Optional[SolverConfig] = None) -> SolveOutcome:
    """Solve ``model`` with the backend named in ``config`` (default HiGHS via scipy)."""
    global _export_counter
    config = config or SolverConfig()
    try:
        backend = BACKENDS[config.backend]
    except KeyError:
        raise BackendUnavailable(
            f"solver backend {config.backend!r} is not available "
            f"(set 'solver' to one of: {', '.join(sorted(BACKENDS))})"
        ) from None
    if config.export_dir:
        _export_counter += 1
        model.export_lp(Path(config.export_dir) / f"{_export_counter:05d}_{model.name}.lp")
    return backend(model, config)


def solve_optimal(model: OptModel, config: Optional[SolverConfig] = None) -> SolveOutcome:
    """Like :func:`solve` but raise :class:`SolverError` unless the outcome is optimal."""
    out = solve(model, config)
    if not out.optimal:
        raise SolverError(f"{model.name}: solver returned {out.status.value} ({out.message})", out)
    return out
