"""Ground truth at desk scale: deterministic equivalent, grid search,
and full simulation.

The extensive form stacks one dispatch copy per scenario behind shared
integer planning variables, reusing the scenario model builder so the
rows here and in the learning loop cannot drift apart. The quadratic
loss objective makes that a convex MINLP, handled by outer-approximation
tangent cuts on each squared flow term.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .gridmodel import (DGParams, Network, RecourseSolver,
                        build_second_stage)
from .master import MasterSolution, PlanningParams, plan_is_feasible
from .mpif import BackendError, ModelSpec, ScipyBackend
from .scenarios import ScenarioSet

__all__ = [
    "OracleSizeError",
    "RecourseInfeasibleError",
    "enumerate_grid",
    "solve_extensive_form",
    "true_expected_value",
]

VARIABLE_LIMIT = 50_000
GRID_LIMIT = 10_000


class OracleSizeError(RuntimeError):
    """Instance exceeds the guard for a monolithic or exhaustive solve."""


class RecourseInfeasibleError(RuntimeError):
    """A scenario admits no feasible dispatch under the given plan."""

    def __init__(self, scenario_key: str, plan):
        self.scenario_key = scenario_key
        super().__init__(
            f"scenario {scenario_key} is infeasible under plan {plan}"
        )


def _candidate_buses(net: Network) -> list[str]:
    return list(net.bus_ids)


def _estimate_variables(net: Network, n_scen: int, objective: str) -> int:
    per_bus_phases = sum(len(b.phases) for b in net.buses)
    per_line_phases = sum(len(ln.phases) for ln in net.lines)
    per_copy = per_bus_phases * 2 + per_line_phases * 2
    if objective == "voltage_deviation":
        per_copy += per_bus_phases
    master = 2 * len(net.buses)
    return master + n_scen * per_copy


def solve_extensive_form(net: Network, scen: ScenarioSet,
                         params: PlanningParams, objective: str,
                         backend=None, mip_rel_gap: float = 1e-6,
                         variable_limit: int = VARIABLE_LIMIT):
    """Solve the deterministic equivalent; returns (MasterSolution, value).

    Refuses instances whose stacked model would exceed variable_limit.
    """
    est = _estimate_variables(net, len(scen), objective)
    if est > variable_limit:
        raise OracleSizeError(
            f"extensive form needs about {est} variables for "
            f"{len(scen)} scenarios over {len(net.buses)} buses, "
            f"limit is {variable_limit}"
        )
    backend = backend or ScipyBackend(mip_rel_gap=mip_rel_gap)
    buses = _candidate_buses(net)
    dg = params.dg_params
    u_pu = dg.unit_pu(net)
    l_bar = params.max_units

    big = ModelSpec()
    for b in buses:
        big.add_variable(f"x[{b}]", kind="integer", lb=0.0, ub=float(l_bar))
    from .master import _planning_rows
    _planning_rows(big, buses, params, ())

    quad_terms: list[tuple[str, float]] = []  # (flow var, weight) pairs
    zero_cap = {b: 0 for b in buses}
    for s_idx, s in enumerate(scen):
        p_s = float(scen.probabilities[s_idx])
        copy = build_second_stage(net, s, zero_cap, objective, dg,
                                  suffix=f"@{s.key}")
        for v in copy.variables:
            big.add_variable(v.name, kind=v.kind, lb=v.lb, ub=v.ub)
        for con in copy.constraints:
            if con.tag.startswith("link["):
                bus = con.tag[5:con.tag.index("]")]
                coeffs = dict(con.coeffs)
                coeffs[f"x[{bus}]"] = -u_pu
                big.add_constraint(coeffs, "<=", 0.0, tag=con.tag)
            else:
                big.add_constraint(con.coeffs, con.sense, con.rhs,
                                   tag=con.tag)
        for name, c in copy.objective.items():
            big.objective[name] = big.objective.get(name, 0.0) + p_s * c
        for (va, vb), c in copy.objective_quad.items():
            if va != vb:
                raise BackendError("unexpected cross quadratic term")
            quad_terms.append((va, p_s * c))

    if not quad_terms:
        out = backend.solve(big)
        if out.status != "optimal":
            raise BackendError(
                f"extensive form solve failed: {out.status} {out.message}"
            )
        sol = _extract_plan(out.primal, buses, params)
        return replace(sol, master_objective=float(out.objective_value)), \
            float(out.objective_value)

    solver = RecourseSolver(net, objective, dg, backend=backend)

    def evaluate(units):
        try:
            return true_expected_value(units, net, scen, objective, dg,
                                       recourse=solver)
        except RecourseInfeasibleError:
            return None

    sol, value = _solve_with_tangents(big, quad_terms, backend, buses,
                                      params, evaluate)
    return sol, value


def _solve_with_tangents(big: ModelSpec, quad_terms, backend, buses, params,
                         evaluate, max_rounds: int = 60):
    """Outer approximation for separable squared terms over a MILP core.

    Each weighted square w >= c*q^2 is replaced by an epigraph variable
    supported by tangents c*(2*q_hat*q - q_hat^2) added at the incumbent.
    The incumbent plan is rescored exactly through the per-scenario
    solver each round; termination compares that value against the
    relaxation bound.  The absolute floor scales with the term count
    because every epigraph variable may sit a feasibility tolerance
    below its supporting cuts.
    """
    for i, (qvar, c) in enumerate(quad_terms):
        big.add_variable(f"sq{i}", lb=0.0)
        big.objective[f"sq{i}"] = 1.0
    cut_count = 0
    best_plan = None
    best_val = np.inf
    for round_no in range(max_rounds):
        out = backend.solve(big)
        if out.status != "optimal":
            raise BackendError(
                f"extensive form round {round_no}: {out.status} {out.message}"
            )
        lower = float(out.objective_value)
        plan = _extract_plan(out.primal, buses, params)
        val = evaluate(plan.units)
        if val is not None and val < best_val:
            best_plan, best_val = plan, float(val)
        stop_tol = max(1e-7 * len(quad_terms),
                       1e-6 * max(1.0, abs(best_val)))
        if best_plan is not None and best_val - lower <= stop_tol:
            return replace(best_plan, master_objective=best_val), best_val
        added = 0
        for i, (qvar, c) in enumerate(quad_terms):
            q_hat = out.primal[qvar]
            viol = c * q_hat * q_hat - out.primal[f"sq{i}"]
            if viol > 1e-9:
                big.add_constraint(
                    {f"sq{i}": -1.0, qvar: 2.0 * c * q_hat},
                    "<=", c * q_hat * q_hat,
                    tag=f"tan{cut_count}",
                )
                cut_count += 1
                added += 1
        if added == 0 and best_plan is not None:
            # linearization is as tight as the solver tolerance allows
            return replace(best_plan, master_objective=best_val), best_val
    raise BackendError("tangent refinement did not converge")


def _extract_plan(primal, buses, params) -> MasterSolution:
    units = {}
    siting = {}
    for b in buses:
        units[b] = int(round(primal[f"x[{b}]"]))
        siting[b] = int(round(primal.get(f"sit[{b}]", 0.0)))
    return MasterSolution(units=units, siting=siting, master_objective=0.0)


def true_expected_value(units, net: Network, scen: ScenarioSet,
                        objective: str, dg_params: DGParams,
                        recourse=None) -> float:
    """Probability-weighted dispatch cost of a plan over every scenario."""
    solver = recourse or RecourseSolver(net, objective, dg_params)
    capacity = {b: int(units.get(b, 0)) for b in net.bus_ids}
    total = 0.0
    for s_idx, s in enumerate(scen):
        outcome = solver.solve(s, capacity)
        if not outcome.feasible:
            raise RecourseInfeasibleError(s.key, capacity)
        total += float(scen.probabilities[s_idx]) * outcome.recourse_value
    return total


def enumerate_grid(net: Network, scen: ScenarioSet, params: PlanningParams,
                   objective: str, grid_limit: int = GRID_LIMIT):
    """Exhaustive search over planning-feasible integer allocations.

    Returns (units, value) at the minimizer; allocations with any
    infeasible scenario score infinity. Ties break lexicographically
    by the candidate ordering.
    """
    buses = _candidate_buses(net)
    l_bar = params.max_units
    cost_per_unit = params.unit_cost_per_kw * params.unit_kw
    points: list[dict[str, int]] = []

    def descend(idx: int, partial: list[int], spend: float, active: int):
        if spend > params.budget + 1e-9 or active > params.count_max:
            return
        if idx == len(buses):
            cand = dict(zip(buses, partial))
            if plan_is_feasible(cand, params, n_buses=len(buses))[0]:
                points.append(cand)
                if len(points) > grid_limit:
                    raise OracleSizeError(
                        f"feasible grid exceeds {grid_limit} points"
                    )
            return
        for n in range(l_bar + 1):
            descend(idx + 1, partial + [n],
                    spend + n * cost_per_unit, active + (1 if n else 0))

    descend(0, [], 0.0, 0)
    if not points:
        raise OracleSizeError("no planning-feasible integer point exists")
    solver = RecourseSolver(net, objective, params.dg_params)
    best = None
    best_val = np.inf
    for cand in points:
        try:
            val = true_expected_value(cand, net, scen, objective,
                                      params.dg_params, recourse=solver)
        except RecourseInfeasibleError:
            continue
        if val < best_val - 1e-12:
            best, best_val = cand, val
    if best is None:
        raise RecourseInfeasibleError("all", "every feasible allocation")
    return best, float(best_val)
