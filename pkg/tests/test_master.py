import itertools
import time

import numpy as np
import pytest

from dgplan.master import (FeasibilityCut, MasterInfeasibleError,
                           PlanningParams, add_feasibility_cut,
                           build_epigraph_master, build_lambda_master,
                           plan_is_feasible, solve_master)
from dgplan.pwl import CoordinateFunction, CoordinateFunctionSet


def make_vfa(slope_lists, names=None):
    funcs = [CoordinateFunction(0, len(s), np.array(s, dtype=float))
             for s in slope_lists]
    if names is None:
        names = tuple(f"b{i}" for i in range(len(funcs)))
    return CoordinateFunctionSet(funcs, tuple(names))


def free_params(max_units, n_buses=None, unit_kw=10.0):
    """Budget and count limits loose enough to never bind."""
    return PlanningParams(budget=1e9, unit_kw=unit_kw, unit_cost_per_kw=1.0,
                          size_min_kw=unit_kw,
                          size_max_kw=unit_kw * max_units,
                          count_min=0, count_max=99)


def enumerate_best(vfa, params):
    """Exhaustive search over the feasible integer grid."""
    top = [f.num_segments for f in vfa]
    best = None
    for units in itertools.product(*(range(t + 1) for t in top)):
        u = dict(zip(vfa.names, units))
        ok, _ = plan_is_feasible(u, params, vfa.names)
        if not ok:
            continue
        val = vfa.total_value(list(units))
        if best is None or val < best[1] - 1e-12:
            best = (u, val)
    return best


class TestLambdaEncoding:
    def test_zero_functions_zero_objective(self):
        vfa = make_vfa([[0, 0], [0, 0]])
        params = free_params(2)
        sol = solve_master(build_lambda_master(vfa, params), params)
        assert sol.master_objective == pytest.approx(0.0, abs=1e-9)

    def test_single_bus_convex_dip(self):
        # anchored values [0, -2, -1]: one unit is optimal
        vfa = make_vfa([[-2.0, 1.0]])
        params = free_params(2)
        sol = solve_master(build_lambda_master(vfa, params), params)
        assert sol.units == {"b0": 1}
        assert sol.master_objective == pytest.approx(-2.0, abs=1e-9)

    def test_budget_forces_single_unit(self):
        vfa = make_vfa([[-4.0], [-1.0]])
        params = PlanningParams(budget=10.0, unit_kw=10.0,
                                unit_cost_per_kw=1.0, size_min_kw=10.0,
                                size_max_kw=10.0, count_min=0, count_max=1)
        sol = solve_master(build_lambda_master(vfa, params), params)
        assert sol.units == {"b0": 1, "b1": 0}
        assert sol.master_objective == pytest.approx(-4.0, abs=1e-9)

    def test_lambda_x_is_integral(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            slopes = np.sort(rng.normal(size=(2, 4)), axis=1)
            vfa = make_vfa(slopes.tolist())
            params = free_params(4)
            sol = solve_master(build_lambda_master(vfa, params), params)
            for n in sol.units.values():
                assert abs(n - round(n)) < 1e-6


class TestEpigraphEncoding:
    def test_zero_functions(self):
        vfa = make_vfa([[0, 0, 0]])
        params = free_params(3)
        sol = solve_master(build_epigraph_master(vfa, params), params)
        assert sol.master_objective == pytest.approx(0.0, abs=1e-9)

    def test_matches_lambda_on_spec_instances(self):
        cases = [
            [[-2.0, 1.0]],
            [[-4.0], [-1.0]],
            [[0.0, 0.0], [0.0, 0.0]],
        ]
        for slopes in cases:
            vfa = make_vfa(slopes)
            params = free_params(max(len(s) for s in slopes))
            a = solve_master(build_lambda_master(vfa, params), params)
            b = solve_master(build_epigraph_master(vfa, params), params)
            assert a.master_objective == pytest.approx(b.master_objective,
                                                       abs=1e-7)
            assert a.units == b.units

    def test_epigraph_tight_at_optimum(self):
        rng = np.random.default_rng(3)
        vfa = make_vfa(np.sort(rng.normal(size=(3, 5)), axis=1).tolist())
        params = free_params(5)
        model = build_epigraph_master(vfa, params)
        sol = solve_master(model, params)
        for name, f in zip(vfa.names, vfa):
            x = sol.units[name]
            vals = f.breakpoint_values()
            # t must equal the max affine piece at x, which at integer x
            # is just g(x)
            assert vfa[name].evaluate(x) == pytest.approx(vals[x], abs=1e-7)


class TestEncodingEquivalence:
    def test_random_convex_instances(self):
        rng = np.random.default_rng(11)
        for trial in range(60):
            n_b = int(rng.integers(1, 6))
            segs = int(rng.integers(1, 7))
            slopes = np.sort(rng.normal(scale=3.0, size=(n_b, segs)), axis=1)
            vfa = make_vfa(slopes.tolist())
            unit_kw = 10.0
            max_total = n_b * segs
            budget = float(rng.integers(1, max_total + 1)) * unit_kw
            params = PlanningParams(
                budget=budget, unit_kw=unit_kw, unit_cost_per_kw=1.0,
                size_min_kw=unit_kw, size_max_kw=unit_kw * segs,
                count_min=0, count_max=n_b)
            a = solve_master(build_lambda_master(vfa, params), params)
            b = solve_master(build_epigraph_master(vfa, params), params)
            assert a.master_objective == pytest.approx(b.master_objective,
                                                       abs=1e-6)
            assert vfa.total_value([a.units[n] for n in vfa.names]) == \
                pytest.approx(vfa.total_value([b.units[n] for n in vfa.names]),
                              abs=1e-6)

    def test_agrees_with_grid_enumeration(self):
        rng = np.random.default_rng(13)
        for trial in range(25):
            n_b = int(rng.integers(1, 4))
            segs = int(rng.integers(1, 5))
            slopes = np.sort(rng.normal(scale=2.0, size=(n_b, segs)), axis=1)
            vfa = make_vfa(slopes.tolist())
            unit_kw = 10.0
            params = PlanningParams(
                budget=float(rng.integers(1, n_b * segs + 1)) * unit_kw,
                unit_kw=unit_kw, unit_cost_per_kw=1.0,
                size_min_kw=unit_kw, size_max_kw=unit_kw * segs,
                count_min=0, count_max=n_b)
            want = enumerate_best(vfa, params)
            sol = solve_master(build_lambda_master(vfa, params), params)
            assert sol.master_objective == pytest.approx(want[1], abs=1e-6)


class TestSiting:
    def test_count_min_forces_placement(self):
        vfa = make_vfa([[0.0, 0.0], [0.0, 0.0]])
        params = PlanningParams(budget=1e9, unit_kw=10.0,
                                unit_cost_per_kw=1.0, size_min_kw=10.0,
                                size_max_kw=20.0, count_min=1, count_max=2)
        sol = solve_master(build_lambda_master(vfa, params), params)
        assert sum(sol.siting.values()) >= 1
        assert sum(sol.units.values()) >= 1

    def test_size_min_enforced_when_sited(self):
        # siting a bus forces at least size_min of capacity there
        vfa = make_vfa([[-1.0, -0.5, -0.2]])
        params = PlanningParams(budget=1e9, unit_kw=10.0,
                                unit_cost_per_kw=1.0, size_min_kw=20.0,
                                size_max_kw=30.0, count_min=1, count_max=1)
        sol = solve_master(build_lambda_master(vfa, params), params)
        assert sol.units["b0"] >= 2


class TestFeasibilityCuts:
    def test_cut_excludes_zero_plan(self):
        vfa = make_vfa([[1.0], [2.0]])  # positive slopes favor x = 0
        params = free_params(1)
        base = solve_master(build_lambda_master(vfa, params), params)
        assert base.units == {"b0": 0, "b1": 0}
        cuts = add_feasibility_cut([], {"b1": 1.0}, rhs=1.0)
        sol = solve_master(build_lambda_master(vfa, params, cuts=cuts),
                           params)
        assert sol.units["b1"] >= 1
        # re-solved plan satisfies the cut row
        lhs = sum(c * sol.units[b] for b, c in cuts[0].coefficients.items())
        assert lhs >= cuts[0].rhs - 1e-9

    def test_duplicate_cut_changes_nothing(self):
        vfa = make_vfa([[1.0], [2.0]])
        params = free_params(1)
        cuts = add_feasibility_cut([], {"b1": 1.0}, rhs=1.0)
        one = solve_master(build_lambda_master(vfa, params, cuts=cuts),
                           params)
        cuts2 = add_feasibility_cut(cuts, {"b1": 1.0}, rhs=1.0)
        two = solve_master(build_lambda_master(vfa, params, cuts=cuts2),
                           params)
        assert one.units == two.units
        assert one.master_objective == pytest.approx(two.master_objective)

    def test_unsatisfiable_cuts_raise(self):
        vfa = make_vfa([[1.0]])
        params = free_params(1)
        cuts = add_feasibility_cut([], {"b0": 1.0}, rhs=5.0)  # needs x0 >= 5
        with pytest.raises(MasterInfeasibleError):
            solve_master(build_lambda_master(vfa, params, cuts=cuts), params)

    def test_cuts_apply_to_epigraph_too(self):
        vfa = make_vfa([[1.0], [2.0]])
        params = free_params(1)
        cuts = add_feasibility_cut([], {"b0": 1.0, "b1": 1.0}, rhs=2.0)
        sol = solve_master(build_epigraph_master(vfa, params, cuts=cuts),
                           params)
        assert sol.units["b0"] + sol.units["b1"] >= 2


class TestPlanFeasible:
    def test_respects_budget(self):
        params = PlanningParams(budget=25.0, unit_kw=10.0,
                                unit_cost_per_kw=1.0, size_min_kw=10.0,
                                size_max_kw=30.0, count_min=0, count_max=2)
        assert plan_is_feasible({"a": 2, "b": 0}, params, ("a", "b"))[0]
        assert not plan_is_feasible({"a": 2, "b": 1}, params, ("a", "b"))[0]

    def test_respects_count_max(self):
        params = PlanningParams(budget=1e9, unit_kw=10.0,
                                unit_cost_per_kw=1.0, size_min_kw=10.0,
                                size_max_kw=30.0, count_min=0, count_max=1)
        ok, reasons = plan_is_feasible({"a": 1, "b": 1}, params, ("a", "b"))
        assert not ok
        assert any("count" in r for r in reasons)
