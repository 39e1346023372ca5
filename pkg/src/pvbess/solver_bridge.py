"""Thin abstraction over LP/MILP construction and solution.

Modeling modules build a :class:`ModelHandle` (variables, linear rows,
objective) and call :func:`solve`. The single backend is HiGHS, reached
through ``scipy.optimize.linprog`` for pure LPs (which also yields duals)
and ``scipy.optimize.milp`` when integer variables are present. No
backend-specific options leak through beyond ``mip_gap`` and
``time_limit``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

LESS_EQUAL = "<="
EQUAL = "="
GREATER_EQUAL = ">="
_SENSES = (LESS_EQUAL, EQUAL, GREATER_EQUAL)

MINIMIZE = "min"
MAXIMIZE = "max"

DEFAULT_MIP_GAP = 1e-6
FEASIBILITY_TOL = 1e-6


class ModelError(ValueError):
    """Raised for malformed model construction (bad bounds, unknown ids, duplicate names)."""


@dataclass
class _Variable:
    index: int
    lb: float
    ub: float
    integral: bool
    name: str


@dataclass
class _Constraint:
    index: int
    coeffs: list[tuple[int, float]]
    sense: str
    rhs: float
    name: str


@dataclass
class SolveOutcome:
    """Result of one backend solve.

    ``duals`` follows the convention dual_i = d(objective)/d(rhs_i) of the
    stated problem, so for a minimization: >= rows carry nonnegative duals,
    <= rows nonpositive ones. Bound duals (reduced costs, split by active
    side) are kept so strong duality can be checked externally. Dual fields
    are populated only for pure-LP solves requested with ``want_duals``.
    """

    status: str  # optimal | infeasible | unbounded | limit
    objective: float
    primal: np.ndarray
    duals: np.ndarray | None
    dual_lower: np.ndarray | None
    dual_upper: np.ndarray | None
    wall_time: float
    message: str = ""
    objective_bound: float = math.nan  # proven bound (MILP dual bound; = objective for exact solves)


class ModelHandle:
    """A linear or mixed-integer linear model under construction.

    Single-owner while being mutated; distinct handles may be built and
    solved concurrently.
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[_Variable] = []
        self.constraints: list[_Constraint] = []
        self.objective_sense: str | None = None
        self.objective_coeffs: dict[int, float] = {}
        self.objective_constant: float = 0.0
        self._var_names: dict[str, int] = {}
        self._con_names: dict[str, int] = {}

    # -- construction -------------------------------------------------

    def add_variable(
        self,
        lb: float = 0.0,
        ub: float = math.inf,
        integral: bool = False,
        name: str | None = None,
    ) -> int:
        if lb > ub:
            raise ModelError(f"variable bounds reversed: lb={lb} > ub={ub}")
        index = len(self.variables)
        if name is None:
            name = f"x{index}"
        if name in self._var_names:
            raise ModelError(f"duplicate variable name {name!r}")
        self.variables.append(_Variable(index, float(lb), float(ub), bool(integral), name))
        self._var_names[name] = index
        return index

    def add_constraint(
        self,
        coeffs,
        sense: str,
        rhs: float,
        name: str | None = None,
    ) -> int:
        if sense not in _SENSES:
            raise ModelError(f"unknown sense {sense!r}")
        coeffs = [(int(v), float(c)) for v, c in coeffs]
        for v, _ in coeffs:
            if not 0 <= v < len(self.variables):
                raise ModelError(f"constraint references unregistered variable id {v}")
        index = len(self.constraints)
        if name is None:
            name = f"c{index}"
        if name in self._con_names:
            raise ModelError(f"duplicate constraint name {name!r}")
        self.constraints.append(_Constraint(index, coeffs, sense, float(rhs), name))
        self._con_names[name] = index
        return index

    def set_objective(self, sense: str, coeffs, constant: float = 0.0) -> None:
        if sense not in (MINIMIZE, MAXIMIZE):
            raise ModelError(f"objective sense must be {MINIMIZE!r} or {MAXIMIZE!r}")
        coeffs = {int(v): float(c) for v, c in coeffs}
        for v in coeffs:
            if not 0 <= v < len(self.variables):
                raise ModelError(f"objective references unregistered variable id {v}")
        self.objective_sense = sense
        self.objective_coeffs = coeffs
        self.objective_constant = float(constant)

    # -- queries ------------------------------------------------------

    @property
    def num_variables(self) -> int:
        return len(self.variables)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    @property
    def num_integral(self) -> int:
        return sum(1 for v in self.variables if v.integral)

    def variable_by_name(self, name: str) -> int:
        return self._var_names[name]

    def constraint_by_name(self, name: str) -> int:
        return self._con_names[name]

    # -- export -------------------------------------------------------

    def to_lp_text(self) -> str:
        """Render the model in CPLEX LP text format (for inspection/golden files)."""
        if self.objective_sense is None:
            raise ModelError("model has no objective")

        def clean(name: str) -> str:
            return name.replace("[", "(").replace("]", ")").replace(",", "_").replace(" ", "")

        def term(coef: float, name: str) -> str:
            sign = "-" if coef < 0 else "+"
            return f"{sign} {abs(coef):.12g} {clean(name)}"

        lines = [f"\\ {self.name}"]
        lines.append("Maximize" if self.objective_sense == MAXIMIZE else "Minimize")
        obj_terms = [term(c, self.variables[v].name) for v, c in sorted(self.objective_coeffs.items())]
        if self.objective_constant:
            obj_terms.append(term(self.objective_constant, "")[:-1].rstrip())
        lines.append(" obj: " + (" ".join(obj_terms) if obj_terms else "0"))
        lines.append("Subject To")
        sense_map = {LESS_EQUAL: "<=", EQUAL: "=", GREATER_EQUAL: ">="}
        for con in self.constraints:
            body = " ".join(term(c, self.variables[v].name) for v, c in con.coeffs) or "0 x0"
            lines.append(f" {clean(con.name)}: {body} {sense_map[con.sense]} {con.rhs:.12g}")
        lines.append("Bounds")
        for v in self.variables:
            lo = "-inf" if v.lb == -math.inf else f"{v.lb:.12g}"
            hi = "+inf" if v.ub == math.inf else f"{v.ub:.12g}"
            lines.append(f" {lo} <= {clean(v.name)} <= {hi}")
        integers = [clean(v.name) for v in self.variables if v.integral]
        if integers:
            lines.append("General")
            lines.extend(" " + n for n in integers)
        lines.append("End")
        return "\n".join(lines) + "\n"


# -- solving ----------------------------------------------------------


def _build_matrices(model: ModelHandle):
    n = model.num_variables
    rows_ub, rhs_ub, map_ub = [], [], []  # (constraint idx, flip) for dual recovery
    rows_eq, rhs_eq, map_eq = [], [], []
    for con in model.constraints:
        if con.sense == EQUAL:
            rows_eq.append(con)
            rhs_eq.append(con.rhs)
            map_eq.append(con.index)
        elif con.sense == LESS_EQUAL:
            rows_ub.append((con, 1.0))
            rhs_ub.append(con.rhs)
            map_ub.append((con.index, 1.0))
        else:
            rows_ub.append((con, -1.0))
            rhs_ub.append(-con.rhs)
            map_ub.append((con.index, -1.0))

    def matrix(entries, flip=None):
        data, ri, ci = [], [], []
        for r, item in enumerate(entries):
            con, mult = item if flip else (item, 1.0)
            for v, c in con.coeffs:
                ri.append(r)
                ci.append(v)
                data.append(c * mult)
        return sparse.csr_matrix((data, (ri, ci)), shape=(len(entries), n))

    a_ub = matrix(rows_ub, flip=True)
    a_eq = matrix(rows_eq)
    return a_ub, np.array(rhs_ub), map_ub, a_eq, np.array(rhs_eq), map_eq


_LP_STATUS = {0: "optimal", 1: "limit", 2: "infeasible", 3: "unbounded", 4: "limit"}
_MILP_STATUS = {0: "optimal", 1: "limit", 2: "infeasible", 3: "unbounded", 4: "limit"}


def solve(
    model: ModelHandle,
    *,
    mip_gap: float = DEFAULT_MIP_GAP,
    time_limit: float | None = None,
    want_duals: bool = False,
) -> SolveOutcome:
    """Solve the model with HiGHS and map the result back to model ids.

    Maximization is handled by negating the objective internally; reported
    objective and duals refer to the model as stated. Backend failures are
    surfaced as status ``limit`` with a diagnostic message, never raised.
    """
    if model.objective_sense is None:
        raise ModelError("model has no objective")
    n = model.num_variables
    sign = -1.0 if model.objective_sense == MAXIMIZE else 1.0
    c = np.zeros(n)
    for v, coef in model.objective_coeffs.items():
        c[v] = sign * coef
    lb = np.array([v.lb for v in model.variables])
    ub = np.array([v.ub for v in model.variables])
    a_ub, b_ub, map_ub, a_eq, b_eq, map_eq = _build_matrices(model)
    is_mip = model.num_integral > 0

    start = time.perf_counter()
    try:
        if is_mip:
            integrality = np.array([1 if v.integral else 0 for v in model.variables])
            constraints = []
            if a_ub.shape[0]:
                constraints.append(LinearConstraint(a_ub, -np.inf, b_ub))
            if a_eq.shape[0]:
                constraints.append(LinearConstraint(a_eq, b_eq, b_eq))
            options = {"mip_rel_gap": mip_gap, "presolve": True}
            if time_limit is not None:
                options["time_limit"] = time_limit
            res = milp(
                c,
                constraints=constraints,
                integrality=integrality,
                bounds=Bounds(lb, ub),
                options=options,
            )
            status = _MILP_STATUS.get(res.status, "limit")
        else:
            options = {"presolve": True}
            if time_limit is not None:
                options["time_limit"] = time_limit
            res = linprog(
                c,
                A_ub=a_ub if a_ub.shape[0] else None,
                b_ub=b_ub if b_ub.shape[0] else None,
                A_eq=a_eq if a_eq.shape[0] else None,
                b_eq=b_eq if b_eq.shape[0] else None,
                bounds=np.column_stack([lb, ub]),
                method="highs",
                options=options,
            )
            status = _LP_STATUS.get(res.status, "limit")
    except Exception as exc:  # backend blow-up: degrade, don't crash callers
        return SolveOutcome(
            status="limit",
            objective=math.nan,
            primal=np.full(n, math.nan),
            duals=None,
            dual_lower=None,
            dual_upper=None,
            wall_time=time.perf_counter() - start,
            message=f"backend failure: {exc}",
        )
    elapsed = time.perf_counter() - start

    if res.x is None:
        return SolveOutcome(
            status=status if status != "optimal" else "limit",
            objective=math.nan,
            primal=np.full(n, math.nan),
            duals=None,
            dual_lower=None,
            dual_upper=None,
            wall_time=elapsed,
            message=str(getattr(res, "message", "")),
        )

    primal = np.asarray(res.x, dtype=float)
    objective = sign * float(res.fun) + model.objective_constant
    bound = objective
    if is_mip and getattr(res, "mip_dual_bound", None) is not None:
        bound = sign * float(res.mip_dual_bound) + model.objective_constant

    duals = dual_lower = dual_upper = None
    if want_duals and not is_mip and status == "optimal":
        duals = np.zeros(model.num_constraints)
        if map_ub:
            marg = np.asarray(res.ineqlin.marginals, dtype=float)
            for r, (cid, flip) in enumerate(map_ub):
                duals[cid] = sign * flip * marg[r]
        if map_eq:
            marg = np.asarray(res.eqlin.marginals, dtype=float)
            for r, cid in enumerate(map_eq):
                duals[cid] = sign * marg[r]
        dual_lower = sign * np.asarray(res.lower.marginals, dtype=float)
        dual_upper = sign * np.asarray(res.upper.marginals, dtype=float)

    return SolveOutcome(
        status=status,
        objective=objective,
        primal=primal,
        duals=duals,
        dual_lower=dual_lower,
        dual_upper=dual_upper,
        wall_time=elapsed,
        message=str(getattr(res, "message", "")),
        objective_bound=bound,
    )


def constraint_violation(model: ModelHandle, primal: np.ndarray) -> float:
    """Largest absolute constraint violation of a candidate point."""
    worst = 0.0
    for con in model.constraints:
        lhs = sum(c * primal[v] for v, c in con.coeffs)
        if con.sense == LESS_EQUAL:
            worst = max(worst, lhs - con.rhs)
        elif con.sense == GREATER_EQUAL:
            worst = max(worst, con.rhs - lhs)
        else:
            worst = max(worst, abs(lhs - con.rhs))
    return worst


def dual_objective(model: ModelHandle, outcome: SolveOutcome) -> float:
    """Dual objective rhs'y plus bound terms; equals the primal objective at optimality."""
    if outcome.duals is None:
        raise ModelError("outcome carries no duals")
    total = model.objective_constant
    for con in model.constraints:
        total += con.rhs * outcome.duals[con.index]
    for v in model.variables:
        zl = outcome.dual_lower[v.index]
        zu = outcome.dual_upper[v.index]
        if zl and math.isfinite(v.lb):
            total += v.lb * zl
        if zu and math.isfinite(v.ub):
            total += v.ub * zu
    return total
