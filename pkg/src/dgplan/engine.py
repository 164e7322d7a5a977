"""Adaptive learning loop for the planning problem.

Each iteration solves the first stage on the current learned function
(or draws a random feasible plan during exploration), samples one
scenario, solves the dispatch problem, and either updates the visited
slope from the linking dual and re-projects, or turns a Farkas ray into
a feasibility cut. Terminates when the moving average of the master
objective stalls, or at k_max.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .gridmodel import Network, RecourseSolver
from .master import (FeasibilityCut, MasterSolution, PlanningParams,
                     add_feasibility_cut, build_epigraph_master,
                     build_lambda_master, plan_is_feasible, solve_master)
from .mpif import BackendError, ScipyBackend
from .pwl import CoordinateFunction, CoordinateFunctionSet, project_isotone
from .scenarios import ScenarioSet

__all__ = [
    "EngineConfig",
    "IterationRecord",
    "RunResult",
    "approximation_quality",
    "check_termination",
    "run_spar",
    "step_size",
    "write_trace_csv",
]

STEP_RULES = ("rule1", "rule2", "rule3")
ENCODINGS = ("lambda", "epigraph")
OBJECTIVES = ("voltage_deviation", "power_loss")


@dataclass(frozen=True)
class EngineConfig:
    k_max: int = 100
    epsilon: float = 1e-4
    window: int = 5
    step_rule: str = "rule1"
    encoding: str = "lambda"
    explore_iters: int = 0
    objective: str = "voltage_deviation"
    seed: int = 0

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}")
        if self.encoding not in ENCODINGS:
            raise ValueError(f"encoding must be one of {ENCODINGS}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if not 0 <= self.explore_iters < self.k_max:
            raise ValueError("need 0 <= explore_iters < k_max")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    master_objective: float
    scenario_index: int
    recourse_value: float | None
    step_size: float | None
    cut_count: int
    quality: float | None
    units: dict[str, int]


@dataclass(frozen=True)
class RunResult:
    solution: MasterSolution
    vfa: CoordinateFunctionSet
    iterations: int
    trace: tuple[IterationRecord, ...]
    quality_history: tuple[tuple[int, float], ...]


def step_size(rule: str, k: int) -> float:
    if k < 1:
        raise ValueError(f"step index must be at least 1, got {k}")
    if rule == "rule1":
        return 20.0 / (20.0 + k)
    if rule == "rule2":
        return 1.0 / k
    if rule == "rule3":
        return min(1.0, 20.0 / k)
    raise ValueError(f"unknown step rule {rule!r}")


def check_termination(objective_history, epsilon: float, window: int) -> bool:
    """Moving averages over `window` at the last two positions agree."""
    hist = list(objective_history)
    if len(hist) <= window:
        return False
    now = sum(hist[-window:]) / window
    prev = sum(hist[-window - 1:-1]) / window
    return abs(now - prev) <= epsilon


def _build_master(encoding, vfa, params, cuts):
    if encoding == "lambda":
        return build_lambda_master(vfa, params, cuts)
    return build_epigraph_master(vfa, params, cuts)


def _cut_ok(x, cut) -> bool:
    lhs = sum(c * x.get(b, 0) for b, c in cut.coefficients.items())
    return lhs >= cut.rhs - 1e-9


def _random_feasible(rng, buses, params, cuts, attempts=500):
    """Uniform draw over the box, rejected against the planning rows."""
    l_bar = params.max_units
    for _ in range(attempts):
        x = {b: int(rng.integers(0, l_bar + 1)) for b in buses}
        ok, _ = plan_is_feasible(x, params, n_buses=len(buses))
        if ok and all(_cut_ok(x, c) for c in cuts):
            return x
    return None


def _iteration_rng(seed: int, k: int):
    """Fresh generator for iteration k, independent of draw counts in
    other iterations.  Makes checkpoint resume replay the same stream."""
    return np.random.default_rng(np.random.SeedSequence(
        entropy=seed, spawn_key=(k,)))


def run_spar(cfg: EngineConfig, net: Network, scen: ScenarioSet,
             params: PlanningParams, backend=None, f_star=None,
             quality_every: int = 0, checkpoint_path=None,
             checkpoint_every: int = 0, resume=None) -> RunResult:
    """Run the learning loop and return the final plan, function, and trace.

    Deterministic for a fixed config seed. Iterations with an infeasible
    second stage add a cut and count toward k_max but do not advance the
    step-size index. Termination is checked only on iterations where the
    master was actually solved (after exploration ends).

    `resume` takes a checkpoint file path (or its parsed dict) and
    continues from the recorded iteration; the remaining trace matches
    what an uninterrupted run would have produced.
    """
    if tuple(scen.bus_ids) != tuple(net.bus_ids):
        raise ValueError(
            "scenario set and network disagree on buses: "
            f"{scen.bus_ids} vs {net.bus_ids}"
        )
    backend = backend or ScipyBackend()
    buses = list(net.bus_ids)
    l_bar = params.max_units
    fns = {b: CoordinateFunction.zeros(0, l_bar) for b in buses}
    cuts: list = []
    master_history: list[float] = []
    step_count = 0
    start_k = 1
    if resume is not None:
        if not isinstance(resume, dict):
            with open(resume) as fh:
                resume = json.load(fh)
        saved = CoordinateFunctionSet.from_json_dict(resume["vfa"])
        if list(saved.names) != buses:
            raise ValueError("checkpoint buses do not match the network")
        fns = {b: saved[b] for b in buses}
        cuts = [FeasibilityCut(dict(c["coefficients"]), rhs=c["rhs"])
                for c in resume["cuts"]]
        master_history = [float(v) for v in resume["master_history"]]
        step_count = int(resume["step_count"])
        start_k = int(resume["iteration"]) + 1
    recourse = RecourseSolver(net, cfg.objective, params.dg_params,
                              backend=backend)
    trace: list[IterationRecord] = []
    quality_history: list[tuple[int, float]] = []
    iterations = start_k - 1

    def current_vfa():
        return CoordinateFunctionSet([fns[b] for b in buses], names=buses)

    for k in range(start_k, cfg.k_max + 1):
        iterations = k
        rng = _iteration_rng(cfg.seed, k)
        solution = None
        if k <= cfg.explore_iters:
            x = _random_feasible(rng, buses, params, cuts)
            if x is None:
                solution = solve_master(
                    _build_master(cfg.encoding, current_vfa(), params, cuts),
                    params, backend)
                x = solution.units
            master_obj = float(sum(
                fns[b].evaluate(x.get(b, 0)) for b in buses
            ))
        else:
            solution = solve_master(
                _build_master(cfg.encoding, current_vfa(), params, cuts),
                params, backend)
            x = solution.units
            master_obj = solution.master_objective
            master_history.append(master_obj)

        s_idx = int(rng.choice(len(scen), p=scen.probabilities))
        capacity = {b: int(x.get(b, 0)) for b in buses}
        outcome = recourse.solve(scen[s_idx], capacity)

        if outcome.feasible:
            step_count += 1
            alpha = step_size(cfg.step_rule, step_count)
            for b in buses:
                gamma = outcome.linking_duals[b]
                l = min(capacity[b], l_bar - 1)
                updated = fns[b].slope_update(l, gamma, alpha)
                fns[b] = fns[b].replace_slopes(project_isotone(updated, l))
            rec_value: float | None = outcome.recourse_value
        else:
            ray = outcome.farkas_ray
            if all(abs(v) <= 1e-12 for v in ray.values()):
                raise BackendError(
                    f"scenario {scen[s_idx].key}: infeasible second stage "
                    "produced an all-zero ray"
                )
            rhs = sum(ray[b] * capacity[b] for b in ray) + outcome.infeasibility
            cuts = add_feasibility_cut(cuts, ray, rhs=rhs)
            alpha = None
            rec_value = None

        quality = None
        if (quality_every and f_star is not None and solution is not None
                and k % quality_every == 0):
            quality = approximation_quality(
                solution, net, scen, params, f_star,
                objective=cfg.objective, recourse=recourse)
            if quality is not None:
                quality_history.append((k, quality))

        trace.append(IterationRecord(
            k=k, master_objective=master_obj, scenario_index=s_idx,
            recourse_value=rec_value, step_size=alpha,
            cut_count=len(cuts), quality=quality, units=dict(capacity),
        ))

        if checkpoint_path and checkpoint_every and k % checkpoint_every == 0:
            _write_checkpoint(checkpoint_path, current_vfa(), cuts, k,
                              step_count, master_history)

        if check_termination(master_history, cfg.epsilon, cfg.window):
            break

    final = solve_master(
        _build_master(cfg.encoding, current_vfa(), params, cuts),
        params, backend)
    if checkpoint_path:
        _write_checkpoint(checkpoint_path, current_vfa(), cuts, iterations,
                          step_count, master_history)
    return RunResult(
        solution=final, vfa=current_vfa(), iterations=iterations,
        trace=tuple(trace), quality_history=tuple(quality_history),
    )


def approximation_quality(x: MasterSolution, net: Network, scen: ScenarioSet,
                          params: PlanningParams, f_star: float,
                          objective: str = "voltage_deviation",
                          recourse=None):
    """Ratio of the best known value to the plan's true expected value.

    Returns None when any scenario is infeasible under the plan, in
    which case the quality of the approximation is undefined.
    """
    from .oracle import RecourseInfeasibleError, true_expected_value

    if f_star <= 0:
        raise ValueError("f_star must be positive")
    try:
        value = true_expected_value(x.units, net, scen, objective,
                                    params.dg_params, recourse=recourse)
    except RecourseInfeasibleError:
        return None
    return f_star / value


def _fmt(v) -> str:
    if v is None:
        return ""
    return f"{v:.12g}"


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "master_obj", "scenario", "Q", "alpha", "cuts",
                    "quality"])
        for r in trace:
            w.writerow([r.k, _fmt(r.master_objective), r.scenario_index,
                        _fmt(r.recourse_value), _fmt(r.step_size),
                        r.cut_count, _fmt(r.quality)])


def _write_checkpoint(path, vfa: CoordinateFunctionSet, cuts, k: int,
                      step_count: int, master_history) -> None:
    payload = {
        "iteration": k,
        "step_count": step_count,
        "master_history": list(master_history),
        "vfa": vfa.to_json_dict(),
        "cuts": [
            {"coefficients": c.coefficients, "rhs": c.rhs} for c in cuts
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
