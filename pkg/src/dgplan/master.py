"""First-stage siting and sizing problem over a learned value function.

Two encodings of the separable piecewise linear objective: binary
selectors per breakpoint (lambda) and affine lower envelopes on an
epigraph variable per bus. Both carry the same planning rows: per-bus
size box tied to a siting binary, budget, and siting count limits.
Feasibility cuts from second-stage Farkas rays append linear rows on
the unit counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gridmodel import DGParams
from .mpif import ModelSpec, ScipyBackend
from .pwl import CoordinateFunctionSet

__all__ = [
    "FeasibilityCut",
    "MasterInfeasibleError",
    "MasterSolution",
    "PlanningParams",
    "add_feasibility_cut",
    "build_epigraph_master",
    "build_lambda_master",
    "plan_is_feasible",
    "solve_master",
]


class MasterInfeasibleError(RuntimeError):
    """First stage has no feasible plan under the current cuts."""


@dataclass(frozen=True)
class PlanningParams:
    """Budget, unit economics, and siting limits for the DG plan."""

    budget: float
    unit_kw: float
    unit_cost_per_kw: float
    size_min_kw: float
    size_max_kw: float
    count_min: int
    count_max: int
    tan_theta: float = 0.0

    def __post_init__(self):
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.unit_kw <= 0:
            raise ValueError("unit_kw must be positive")
        if not 0 <= self.size_min_kw <= self.size_max_kw:
            raise ValueError("need 0 <= size_min_kw <= size_max_kw")
        if not 0 <= self.count_min <= self.count_max:
            raise ValueError("need 0 <= count_min <= count_max")
        if self.unit_cost_per_kw < 0:
            raise ValueError("unit cost must be nonnegative")
        if self.size_max_kw < self.unit_kw:
            raise ValueError("size_max_kw admits zero units everywhere")

    @property
    def max_units(self) -> int:
        """Largest unit count a sited bus may hold."""
        return int(math.floor(self.size_max_kw / self.unit_kw + 1e-9))

    @property
    def dg_params(self) -> DGParams:
        return DGParams(unit_kw=self.unit_kw, tan_theta=self.tan_theta)


@dataclass(frozen=True)
class FeasibilityCut:
    """Linear row sum(coefficients_i * units_i) >= rhs on the unit counts."""

    coefficients: dict[str, float]
    rhs: float = 0.0

    def __post_init__(self):
        coeffs = {str(k): float(v) for k, v in self.coefficients.items()}
        object.__setattr__(self, "coefficients", coeffs)
        if not any(abs(v) > 1e-12 for v in coeffs.values()):
            raise ValueError("feasibility cut needs a nonzero coefficient")


@dataclass(frozen=True)
class MasterSolution:
    units: dict[str, int]
    siting: dict[str, int]
    master_objective: float

    def to_json_dict(self, unit_kw: float) -> dict:
        return {
            "units": dict(self.units),
            "siting": dict(self.siting),
            "kw": {b: n * unit_kw for b, n in self.units.items()},
            "master_objective": self.master_objective,
        }


def add_feasibility_cut(cuts, ray, rhs: float = 0.0):
    """Append a cut built from a Farkas ray; returns the new list."""
    cut = FeasibilityCut(dict(ray), float(rhs))
    return list(cuts) + [cut]


def _bus_names(vfa: CoordinateFunctionSet) -> list[str]:
    if vfa.names is not None:
        return list(vfa.names)
    return [str(i) for i in range(len(vfa))]


def _check_span(vfa: CoordinateFunctionSet, params: PlanningParams):
    for name, fn in zip(_bus_names(vfa), vfa):
        if fn.lower_break != 0 or fn.upper_break != params.max_units:
            raise ValueError(
                f"coordinate function {name} spans "
                f"[{fn.lower_break}, {fn.upper_break}], "
                f"need [0, {params.max_units}]"
            )


def _planning_rows(m: ModelSpec, buses, params: PlanningParams, cuts):
    for b in buses:
        m.add_variable(f"sit[{b}]", kind="binary")
        m.add_constraint(
            {f"x[{b}]": params.unit_kw, f"sit[{b}]": -params.size_max_kw},
            "<=", 0.0, tag=f"size_hi[{b}]",
        )
        m.add_constraint(
            {f"sit[{b}]": params.size_min_kw, f"x[{b}]": -params.unit_kw},
            "<=", 0.0, tag=f"size_lo[{b}]",
        )
    cost = params.unit_cost_per_kw * params.unit_kw
    m.add_constraint({f"x[{b}]": cost for b in buses}, "<=", params.budget,
                     tag="budget")
    m.add_constraint({f"sit[{b}]": 1.0 for b in buses}, "<=",
                     float(params.count_max), tag="count_hi")
    m.add_constraint({f"sit[{b}]": 1.0 for b in buses}, ">=",
                     float(params.count_min), tag="count_lo")
    for idx, cut in enumerate(cuts):
        unknown = [b for b in cut.coefficients if b not in set(buses)]
        if unknown:
            raise ValueError(f"cut {idx} names unknown buses {unknown}")
        m.add_constraint(
            {f"x[{b}]": c for b, c in cut.coefficients.items()},
            ">=", cut.rhs, tag=f"cut{idx}",
        )


def build_lambda_master(vfa: CoordinateFunctionSet, params: PlanningParams,
                        cuts=(), h_linear=None) -> ModelSpec:
    """Breakpoint-selector encoding: one binary per bus per unit count.

    x is modeled continuous and still comes out integral because it is
    a convex combination pinned to a single selected breakpoint.
    """
    _check_span(vfa, params)
    buses = _bus_names(vfa)
    l_bar = params.max_units
    m = ModelSpec()
    obj: dict[str, float] = {}
    for b, fn in zip(buses, vfa):
        vals = fn.breakpoint_values()
        m.add_variable(f"x[{b}]", lb=0.0, ub=float(l_bar))
        pick = {}
        xdef = {f"x[{b}]": 1.0}
        for l in range(l_bar + 1):
            lam = f"lam[{b},{l}]"
            m.add_variable(lam, kind="binary")
            pick[lam] = 1.0
            if l:
                xdef[lam] = -float(l)
            if vals[l]:
                obj[lam] = float(vals[l])
        m.add_constraint(pick, "=", 1.0, tag=f"pick[{b}]")
        m.add_constraint(xdef, "=", 0.0, tag=f"xdef[{b}]")
    if h_linear:
        for b, c in h_linear.items():
            obj[f"x[{b}]"] = obj.get(f"x[{b}]", 0.0) + float(c)
    m.objective = obj
    _planning_rows(m, buses, params, cuts)
    return m


def build_epigraph_master(vfa: CoordinateFunctionSet, params: PlanningParams,
                          cuts=(), h_linear=None) -> ModelSpec:
    """Affine-envelope encoding: integer counts plus one epigraph variable.

    Exactness needs convexity, so non-isotone slopes are rejected. One
    supporting line per breakpoint; the last breakpoint reuses the last
    segment's slope and duplicates its row, kept for symmetry.
    """
    _check_span(vfa, params)
    buses = _bus_names(vfa)
    l_bar = params.max_units
    m = ModelSpec()
    obj: dict[str, float] = {}
    for b, fn in zip(buses, vfa):
        if not fn.is_isotone(tol=1e-9):
            raise ValueError(
                f"coordinate function {b} is not convex; "
                "epigraph encoding needs isotone slopes"
            )
        vals = fn.breakpoint_values()
        m.add_variable(f"x[{b}]", kind="integer", lb=0.0, ub=float(l_bar))
        m.add_variable(f"epi[{b}]", lb=-np.inf)
        obj[f"epi[{b}]"] = 1.0
        for l in range(l_bar + 1):
            slope = float(fn.slopes[min(l, l_bar - 1)])
            # slope*(x - l) + g(l) <= t
            m.add_constraint(
                {f"x[{b}]": slope, f"epi[{b}]": -1.0},
                "<=", slope * l - float(vals[l]),
                tag=f"epi[{b},{l}]",
            )
    if h_linear:
        for b, c in h_linear.items():
            obj[f"x[{b}]"] = obj.get(f"x[{b}]", 0.0) + float(c)
    m.objective = obj
    _planning_rows(m, buses, params, cuts)
    return m


def solve_master(model: ModelSpec, params: PlanningParams,
                 backend=None) -> MasterSolution:
    """Solve a built master and recover integral unit counts and siting."""
    backend = backend or ScipyBackend()
    out = backend.solve(model)
    if out.status == "infeasible":
        n_cuts = sum(1 for c in model.constraints if c.tag.startswith("cut"))
        raise MasterInfeasibleError(
            f"first stage infeasible with {n_cuts} feasibility cuts; "
            "budget, count, or cut rows admit no integer plan"
        )
    if out.status != "optimal":
        raise MasterInfeasibleError(
            f"first stage solve failed: {out.status} {out.message}"
        )
    units: dict[str, int] = {}
    siting: dict[str, int] = {}
    for name, val in out.primal.items():
        if name.startswith("x["):
            bus = name[2:-1]
            rounded = round(val)
            if abs(val - rounded) > 1e-6:
                raise MasterInfeasibleError(
                    f"unit count for {bus} came back non-integral ({val})"
                )
            units[bus] = int(rounded)
        elif name.startswith("sit["):
            siting[name[4:-1]] = int(round(val))
    return MasterSolution(units, siting, float(out.objective_value))


def plan_is_feasible(units, params: PlanningParams,
                     n_buses: int | None = None) -> tuple[bool, list[str]]:
    """Check an integer allocation against the planning rows.

    Siting binaries are implied: a bus holding units must be sited, and
    extra idle sitings can absorb a count floor only when size_min is 0.
    Returns (ok, reasons).
    """
    reasons = []
    l_bar = params.max_units
    active = 0
    for b, n in units.items():
        if n < 0 or n != int(n):
            reasons.append(f"{b}: unit count {n} not a nonnegative integer")
            continue
        if n > l_bar:
            reasons.append(f"{b}: {n} units exceeds per-bus cap {l_bar}")
        if n > 0:
            active += 1
            if params.unit_kw * n < params.size_min_kw - 1e-9:
                reasons.append(
                    f"{b}: {params.unit_kw * n} kW below sited minimum "
                    f"{params.size_min_kw} kW"
                )
    spend = params.unit_cost_per_kw * params.unit_kw * sum(
        max(0, int(n)) for n in units.values()
    )
    if spend > params.budget + 1e-9:
        reasons.append(f"spend {spend} exceeds budget {params.budget}")
    if active > params.count_max:
        reasons.append(f"{active} sited buses exceed count cap {params.count_max}")
    if active < params.count_min:
        if params.size_min_kw > 0:
            reasons.append(
                f"count floor {params.count_min} unreachable: only {active} "
                "buses hold units and sited buses need size_min_kw"
            )
        else:
            pool = n_buses if n_buses is not None else len(units)
            if params.count_min > min(pool, params.count_max):
                reasons.append(f"count floor {params.count_min} exceeds pool")
    return (not reasons, reasons)
