"""End-to-end acceptance gate.

Each test checks one shipped claim at its stated tolerance and appends a
single PASS/FAIL line to the terminal summary, so a full run reads as a
checklist.  Tolerances are part of the contract; do not loosen them here.
"""

import itertools
import json
import time

import numpy as np
import pytest
from click.testing import CliRunner

import conftest
from dgplan.bounds import estimate_bounds, lower_bound, upper_bound
from dgplan.cli import main
from dgplan.engine import EngineConfig, run_spar
from dgplan.gridmodel import DGParams, RecourseSolver, solve_second_stage
from dgplan.master import (PlanningParams, build_epigraph_master,
                           build_lambda_master, plan_is_feasible,
                           solve_master)
from dgplan.oracle import (RecourseInfeasibleError, solve_extensive_form,
                           true_expected_value)
from dgplan.pwl import CoordinateFunction, CoordinateFunctionSet, \
    project_isotone

from conftest import two_bus_dict, two_bus_scenarios, write_network


def check(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line


@pytest.fixture(scope="module")
def f_star_vdev(feeder13, scen20, params13):
    _, val = solve_extensive_form(feeder13, scen20, params13,
                                  "voltage_deviation")
    return val


@pytest.fixture(scope="module")
def f_star_ploss(feeder13, scen20, params13):
    _, val = solve_extensive_form(feeder13, scen20, params13, "power_loss")
    return val


def test_1_optimality_gap(feeder13, scen20, params13, f_star_vdev,
                          f_star_ploss):
    results = {}
    worst_t = 0.0
    for objective, f_star, eps in (
            ("voltage_deviation", f_star_vdev, 1e-4),
            ("power_loss", f_star_ploss, 1e-6)):
        sim = RecourseSolver(feeder13, objective, params13.dg_params)
        values = []
        for seed in range(25):
            cfg = EngineConfig(k_max=100, epsilon=eps, seed=seed,
                               objective=objective)
            t0 = time.perf_counter()
            res = run_spar(cfg, feeder13, scen20, params13)
            worst_t = max(worst_t, time.perf_counter() - t0)
            values.append(true_expected_value(
                res.solution.units, feeder13, scen20, objective,
                params13.dg_params, recourse=sim))
        results[objective] = (float(np.median(values)) - f_star) / f_star
    ok = all(g <= 0.02 for g in results.values()) and worst_t < 60.0
    check("1 optimality gap",
          ok,
          f"median gap vdev {results['voltage_deviation']:.4%}, "
          f"ploss {results['power_loss']:.4%} (limit 2%), "
          f"slowest seed {worst_t:.1f}s (limit 60s)")


def test_2_approximation_quality(feeder13, scen20, params13, f_star_vdev):
    sim = RecourseSolver(feeder13, "voltage_deviation", params13.dg_params)
    qualities = {}
    for rule in ("rule1", "rule2", "rule3"):
        cfg = EngineConfig(k_max=100, seed=0, step_rule=rule)
        res = run_spar(cfg, feeder13, scen20, params13)
        value = true_expected_value(res.solution.units, feeder13, scen20,
                                    "voltage_deviation", params13.dg_params,
                                    recourse=sim)
        qualities[rule] = f_star_vdev / value
    ok = all(q >= 0.95 for q in qualities.values())
    check("2 approximation quality", ok,
          ", ".join(f"{r} {q:.4f}" for r, q in qualities.items())
          + " (floor 0.95)")


def test_3_bound_sandwich(feeder13, scen20, params13, f_star_vdev):
    cfg = EngineConfig(k_max=60, seed=0)
    hits = 0
    gaps = []
    for seed in range(25):
        report, _ = estimate_bounds(cfg, feeder13, scen20, params13,
                                    m_runs=10, batch_size=5, alpha=0.05,
                                    seed=seed)
        if report.lb_ci[0] - 1e-9 <= f_star_vdev <= report.ub_ci[1] + 1e-9:
            hits += 1
        gaps.append(report.bounds_gap / f_star_vdev)
    ok = hits >= 23 and max(gaps) <= 0.10
    check("3 bound sandwich", ok,
          f"EF optimum inside CI {hits}/25 (floor 23), "
          f"gap max {max(gaps):.2%} (limit 10%)")


def _composition_tensors(max_n):
    """Block-averaging matrices for every ordered composition of n."""
    out = {}
    for n in range(2, max_n + 1):
        mats = []
        for bits in itertools.product((0, 1), repeat=n - 1):
            mat = np.zeros((n, n))
            start = 0
            for stop in [i + 1 for i, b in enumerate(bits) if b] + [n]:
                mat[start:stop, start:stop] = 1.0 / (stop - start)
                start = stop
            mats.append(mat)
        out[n] = np.stack(mats)
    return out


def test_4_projection_oracle():
    rng = np.random.default_rng(404)
    tensors = _composition_tensors(8)
    total = 10_000
    lengths = rng.integers(2, 9, size=total)
    t0 = time.perf_counter()
    worst = 0.0
    for n in range(2, 9):
        count = int(np.sum(lengths == n))
        vecs = np.sort(rng.uniform(-10, 10, size=(count, n)), axis=1)
        perturbed = rng.integers(0, n, size=count)
        vecs[np.arange(count), perturbed] = rng.uniform(-10, 10, size=count)
        proj = np.array([project_isotone(v, l)
                         for v, l in zip(vecs, perturbed)])
        again = np.array([project_isotone(p, l)
                          for p, l in zip(proj, perturbed)])
        assert np.max(np.abs(again - proj)) <= 1e-12  # idempotent
        assert np.min(np.diff(proj, axis=1), initial=0.0) >= -1e-12
        # exhaustive oracle: closest isotone consecutive-block average
        cands = np.einsum("cij,vj->vci", tensors[n], vecs)
        feasible = np.all(np.diff(cands, axis=2) >= -1e-12, axis=2)
        dists = np.sum((cands - vecs[:, None, :]) ** 2, axis=2)
        dists[~feasible] = np.inf
        best = cands[np.arange(count), np.argmin(dists, axis=1)]
        worst = max(worst, float(np.max(np.abs(proj - best), initial=0.0)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 5.0
    check("4 projection oracle", ok,
          f"10000 single-perturbation vectors, max deviation "
          f"{worst:.2e} (limit 1e-9), {elapsed:.2f}s (limit 5s)")


def _random_convex_vfa(rng):
    n_bus = int(rng.integers(2, 5))
    l_bar = int(rng.integers(2, 5))
    fns = []
    for i in range(n_bus):
        slopes = np.sort(rng.uniform(-5.0, 5.0, size=l_bar))
        fns.append(CoordinateFunction(0, l_bar, slopes))
    names = tuple(f"b{i}" for i in range(n_bus))
    vfa = CoordinateFunctionSet(fns, names=names)
    params = PlanningParams(
        budget=float(rng.uniform(50.0, 40.0 * n_bus * l_bar)),
        unit_kw=40.0, unit_cost_per_kw=1.0, size_min_kw=40.0,
        size_max_kw=40.0 * l_bar, count_min=0, count_max=l_bar)
    return vfa, params


def test_5_encoding_equivalence(feeder13, scen20, params13):
    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(200):
        vfa, params = _random_convex_vfa(rng)
        lam = solve_master(build_lambda_master(vfa, params), params)
        epi = solve_master(build_epigraph_master(vfa, params), params)
        worst = max(worst, abs(lam.master_objective - epi.master_objective))
    res = run_spar(EngineConfig(k_max=60, seed=0), feeder13, scen20,
                   params13)
    reps = 30
    t0 = time.perf_counter()
    for _ in range(reps):
        solve_master(build_lambda_master(res.vfa, params13), params13)
    t_lam = (time.perf_counter() - t0) / reps
    t0 = time.perf_counter()
    for _ in range(reps):
        solve_master(build_epigraph_master(res.vfa, params13), params13)
    t_epi = (time.perf_counter() - t0) / reps
    ok = worst <= 1e-6 and t_epi <= t_lam
    check("5 encoding equivalence", ok,
          f"200 instances, max objective difference {worst:.2e} "
          f"(limit 1e-6); per-master {t_epi * 1e3:.2f}ms epigraph vs "
          f"{t_lam * 1e3:.2f}ms lambda")


def test_6_recourse_convexity(feeder13, scen20, params13):
    rng = np.random.default_rng(66)
    dg = params13.dg_params
    solver = RecourseSolver(feeder13, "voltage_deviation", dg)
    worst = -np.inf
    for _ in range(50):
        s = scen20[int(rng.integers(len(scen20)))]
        coord = feeder13.bus_ids[int(rng.integers(len(feeder13.bus_ids)))]
        base = {b: int(rng.integers(0, 3)) for b in feeder13.bus_ids}
        vals = []
        for c in range(5):
            cap = dict(base)
            cap[coord] = c
            vals.append(solver.solve(s, cap).recourse_value)
        curv = np.diff(np.diff(vals))
        worst = max(worst, float(-np.min(curv)))
    ok = worst <= 1e-6
    check("6 recourse convexity", ok,
          f"50 probes, largest first-difference decrease {worst:.2e} "
          f"(limit 1e-6)")


def test_7_feasibility_cuts(tmp_path):
    # 400 kW of single-phase load behind a 150 kVA corridor: dispatch
    # is infeasible until at least 9 of the 40 kW units back it up
    net = write_network(tmp_path, two_bus_dict(load_kw=400.0, load_kvar=0.0,
                                               rating_kva=150.0))
    scen = two_bus_scenarios(loads=(1.0,), pvs=(1.0,))
    params = PlanningParams(budget=900.0, unit_kw=40.0,
                            unit_cost_per_kw=1.0, size_min_kw=40.0,
                            size_max_kw=440.0, count_min=0, count_max=11)
    dg = DGParams(unit_kw=40.0)

    feasible = set()
    for s_cap, b_cap in itertools.product(range(12), repeat=2):
        u = {"s": s_cap, "b": b_cap}
        ok, _ = plan_is_feasible(u, params, ("s", "b"))
        if not ok:
            continue
        out = solve_second_stage(net, scen[0], u, "voltage_deviation", dg)
        if out.feasible:
            feasible.add((s_cap, b_cap))
    assert feasible, "constructed instance admits no plan at all"
    assert (0, 0) not in feasible, "zero plan must be infeasible"

    res = run_spar(EngineConfig(k_max=40, seed=0), net, scen, params)
    final = (res.solution.units["s"], res.solution.units["b"])
    terminated_feasible = final in feasible

    cut_points = []
    revisited = False
    for rec in res.trace:
        pt = (rec.units["s"], rec.units["b"])
        if pt in cut_points:
            revisited = True
        if rec.recourse_value is None:
            cut_points.append(pt)

    excludes_feasible = False
    for s_cap, b_cap in cut_points:
        out = solve_second_stage(net, scen[0],
                                 {"s": s_cap, "b": b_cap},
                                 "voltage_deviation", dg)
        rhs = sum(out.farkas_ray[b] * {"s": s_cap, "b": b_cap}[b]
                  for b in out.farkas_ray) + out.infeasibility
        for fs, fb in feasible:
            lhs = out.farkas_ray.get("s", 0.0) * fs + \
                out.farkas_ray.get("b", 0.0) * fb
            if lhs < rhs - 1e-9:
                excludes_feasible = True

    ok = terminated_feasible and not revisited and not excludes_feasible
    check("7 feasibility cuts", ok,
          f"{len(cut_points)} cuts, final plan {res.solution.units} "
          f"feasible={terminated_feasible}, revisited={revisited}, "
          f"excluded feasible point={excludes_feasible}")


def test_8_statistical_arithmetic():
    _, _, ub_ci = upper_bound([10.0, 14.0], 0.05)
    _, _, lb_ci = lower_bound([6.0, 8.0, 10.0], 0.05)
    hand_ub = (12.0 - 3.2898, 12.0 + 3.2898)
    hand_lb = (8.0 - 1.8994, 8.0 + 1.8994)
    err = max(abs(ub_ci[0] - hand_ub[0]), abs(ub_ci[1] - hand_ub[1]),
              abs(lb_ci[0] - hand_lb[0]), abs(lb_ci[1] - hand_lb[1]))
    ok = err <= 1e-4
    check("8 statistical arithmetic", ok,
          f"[10,14] ci {ub_ci[0]:.4f}..{ub_ci[1]:.4f}, "
          f"[6,8,10] ci {lb_ci[0]:.4f}..{lb_ci[1]:.4f}, "
          f"max deviation from hand values {err:.1e} (limit 1e-4)")


def test_9_determinism(tmp_path):
    cfg_text = "\n".join([
        'network = "builtin:feeder13.json"',
        'scenarios = "builtin:scenarios20.csv"',
        'objective = "voltage_deviation"',
        "seed = 0",
        "k_max = 30",
        "budget = 250.0",
        "unit_kw = 25.0",
        "unit_cost_per_kw = 1.0",
        "size_min_kw = 25.0",
        "size_max_kw = 200.0",
        "count_min = 0",
        "count_max = 6",
    ]) + "\n"
    runner = CliRunner()
    outputs = []
    for tag in ("a", "b"):
        cfg = tmp_path / f"{tag}.toml"
        cfg.write_text(cfg_text + f'out = "{tmp_path / tag}"\n')
        result = runner.invoke(main, ["solve", "--config", str(cfg)])
        assert result.exit_code == 0, result.output
        outputs.append(tmp_path / tag)
    same_trace = (outputs[0] / "trace.csv").read_bytes() == \
        (outputs[1] / "trace.csv").read_bytes()
    same_sol = (outputs[0] / "solution.json").read_bytes() == \
        (outputs[1] / "solution.json").read_bytes()
    ok = same_trace and same_sol
    check("9 determinism", ok,
          f"trace.csv identical={same_trace}, "
          f"solution.json identical={same_sol}")
