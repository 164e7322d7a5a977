import json

import numpy as np
import pytest

from dgplan.gridmodel import load_network
from dgplan.master import PlanningParams
from dgplan.scenarios import Scenario, ScenarioSet

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _eye3(scale):
    return [[scale if i == j else 0.0 for j in range(3)] for i in range(3)]


def two_bus_dict(load_kw=120.0, load_kvar=50.0, rating_kva=400.0,
                 r_ohm=0.30, x_ohm=0.45, v_ref=1.0):
    """Single phase-a load hanging off the substation; per-unit friendly."""
    return {
        "s_base_kva": 1000.0,
        "v_base_kv": 4.16,
        "substation": "s",
        "voltage_bounds": [0.81, 1.21],
        "buses": [
            {"id": "s", "phases": "abc",
             "load_kw": [0.0, 0.0, 0.0], "load_kvar": [0.0, 0.0, 0.0]},
            {"id": "b", "phases": "a",
             "load_kw": [load_kw], "load_kvar": [load_kvar],
             "v_ref": [v_ref]},
        ],
        "lines": [
            {"from": "s", "to": "b",
             "r_ohm": _eye3(r_ohm), "x_ohm": _eye3(x_ohm),
             "rating_kva": rating_kva},
        ],
    }


def write_network(tmp_path, doc, name="net.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return load_network(path)


def two_bus_scenarios(loads=(1.0, 1.3), pvs=(1.0, 0.8), probs=None):
    scen = [
        Scenario(f"w{i}", ("s", "b"), np.array([1.0, ld]), np.array([0.0, pv]))
        for i, (ld, pv) in enumerate(zip(loads, pvs))
    ]
    return ScenarioSet(("s", "b"), scen, probs)


@pytest.fixture(scope="session")
def two_bus_net(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("twobus")
    return write_network(tmp, two_bus_dict())


@pytest.fixture(scope="session")
def two_bus_scen():
    return two_bus_scenarios()


@pytest.fixture(scope="session")
def two_bus_params():
    return PlanningParams(budget=100.0, unit_kw=40.0, unit_cost_per_kw=1.0,
                          size_min_kw=40.0, size_max_kw=80.0,
                          count_min=0, count_max=2)


@pytest.fixture(scope="session")
def feeder13():
    from importlib import resources
    return load_network(resources.files("dgplan") / "data" / "feeder13.json")


@pytest.fixture(scope="session")
def scen20():
    from importlib import resources
    return ScenarioSet.from_csv(
        resources.files("dgplan") / "data" / "scenarios20.csv")


@pytest.fixture(scope="session")
def params13():
    return PlanningParams(budget=250.0, unit_kw=25.0, unit_cost_per_kw=1.0,
                          size_min_kw=25.0, size_max_kw=200.0,
                          count_min=0, count_max=6)
