import numpy as np
import pytest

from dgplan.mpif import ModelSpec, ScipyBackend
from dgplan.simplex import DenseSimplex

from test_mpif import random_feasible_lp


def test_hand_lp():
    # max 3x + 2y s.t. x + y <= 4, x <= 2 -> (2, 2), objective -10 minimized
    m = ModelSpec()
    m.add_variable("x", lb=0.0)
    m.add_variable("y", lb=0.0)
    m.add_constraint({"x": 1.0, "y": 1.0}, "<=", 4.0, tag="sum")
    m.add_constraint({"x": 1.0}, "<=", 2.0, tag="capx")
    m.objective = {"x": -3.0, "y": -2.0}
    out = DenseSimplex().solve(m)
    assert out.status == "optimal"
    assert out.objective_value == pytest.approx(-10.0)
    assert out.primal["x"] == pytest.approx(2.0)
    assert out.primal["y"] == pytest.approx(2.0)


def test_equality_row():
    m = ModelSpec()
    m.add_variable("x", lb=0.0)
    m.add_variable("y", lb=0.0)
    m.add_constraint({"x": 1.0, "y": 2.0}, "=", 6.0, tag="eq")
    m.objective = {"x": 1.0, "y": 1.0}
    out = DenseSimplex().solve(m)
    assert out.status == "optimal"
    assert out.objective_value == pytest.approx(3.0)
    assert out.primal["y"] == pytest.approx(3.0)


def test_infeasible_detection():
    m = ModelSpec()
    m.add_variable("x", lb=0.0, ub=1.0)
    m.add_constraint({"x": 1.0}, ">=", 2.0, tag="need")
    out = DenseSimplex().solve(m)
    assert out.status == "infeasible"
    assert out.infeasibility > 0


def test_matches_scipy_on_random_instances():
    rng = np.random.default_rng(17)
    for trial in range(40):
        m = random_feasible_lp(rng, int(rng.integers(2, 7)),
                               int(rng.integers(1, 7)))
        ref = ScipyBackend().solve(m)
        got = DenseSimplex().solve(m)
        assert got.status == ref.status == "optimal"
        assert got.objective_value == pytest.approx(ref.objective_value,
                                                    abs=1e-7)


def test_duals_price_out_objective():
    # dual objective b'y + bound contributions must equal the primal value
    rng = np.random.default_rng(23)
    for trial in range(20):
        m = random_feasible_lp(rng, 3, 4)
        out = DenseSimplex().solve(m)
        assert out.status == "optimal"
        # complementary slackness: inactive rows carry zero dual
        for con in m.constraints:
            lhs = sum(c * out.primal[v] for v, c in con.coeffs.items())
            slack = abs(con.rhs - lhs)
            if slack > 1e-6:
                assert abs(out.duals[con.tag]) < 1e-7
