"""Command line front end: config parsing, run orchestration, reports.

Exit codes: 0 success, 2 bad configuration, 3 file problems, 4 solver
failures. Config is a flat TOML file; flags override single keys.
"""

import csv
import dataclasses
import json
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import click
import tomli

from .bounds import estimate_bounds
from .engine import EngineConfig, run_spar, write_trace_csv
from .gridmodel import NetworkError, RecourseSolver, load_network
from .master import MasterInfeasibleError, PlanningParams
from .mpif import BackendError, ModelError
from .oracle import (OracleSizeError, RecourseInfeasibleError,
                     solve_extensive_form, true_expected_value)
from .scenarios import (HistoryFormatError, ScenarioSet, generate_scenarios,
                        load_history)

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SOLVER = 4

OBJECTIVE_NAMES = {
    "vdev": "voltage_deviation",
    "ploss": "power_loss",
    "voltage_deviation": "voltage_deviation",
    "power_loss": "power_loss",
}

BUILTIN_PREFIX = "builtin:"


class ConfigError(Exception):
    pass


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    """Flat run configuration; defaults follow the reference study setup."""

    network: str = BUILTIN_PREFIX + "feeder13.json"
    scenarios: str = BUILTIN_PREFIX + "scenarios20.csv"
    history: str | None = None
    out: str = "runs"
    objective: str = "voltage_deviation"
    encoding: str = "lambda"
    seed: int = 0
    epsilon: float = 1e-4
    k_max: int = 100
    window: int = 5
    step_rule: str = "rule1"
    explore_iters: int = 0
    checkpoint_every: int = 0
    resume: str | None = None
    budget: float = 1_500_000.0
    unit_kw: float = 2.0
    unit_cost_per_kw: float = 1.01
    size_min_kw: float = 33.0
    size_max_kw: float = 333.0
    count_min: int = 0
    count_max: int = 10
    tan_theta: float = 0.0
    m_runs: int = 10
    batch_size: int = 5
    alpha: float = 0.05
    n_scenarios: int = 24
    noise_std: float = 0.05


_STR_KEYS = {"network", "scenarios", "history", "out", "objective",
             "encoding", "step_rule", "resume"}
_INT_KEYS = {"seed", "k_max", "window", "explore_iters", "checkpoint_every",
             "count_min", "count_max", "m_runs", "batch_size", "n_scenarios"}
_FLOAT_KEYS = {"epsilon", "budget", "unit_kw", "unit_cost_per_kw",
               "size_min_kw", "size_max_kw", "tan_theta", "alpha",
               "noise_std"}


def load_config(path) -> RunConfig:
    """Parse a flat TOML file into a RunConfig, rejecting unknown keys."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None
    cfg = RunConfig()
    for key, value in raw.items():
        if key in _STR_KEYS:
            if not isinstance(value, str):
                raise ConfigError(f"{key} must be a string, got {value!r}")
        elif key in _INT_KEYS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer, got {value!r}")
        elif key in _FLOAT_KEYS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} must be a number, got {value!r}")
            value = float(value)
        else:
            raise ConfigError(f"unknown config key: {key}")
        setattr(cfg, key, value)
    return cfg


def _build_config(config_path, seed, encoding, objective, out) -> RunConfig:
    cfg = load_config(config_path) if config_path else RunConfig()
    if seed is not None:
        cfg.seed = seed
    if encoding is not None:
        cfg.encoding = encoding
    if objective is not None:
        cfg.objective = objective
    if out is not None:
        cfg.out = out
    if cfg.objective not in OBJECTIVE_NAMES:
        raise ConfigError(
            f"objective must be one of {sorted(OBJECTIVE_NAMES)}, "
            f"got {cfg.objective!r}")
    cfg.objective = OBJECTIVE_NAMES[cfg.objective]
    return cfg


def _engine_config(cfg: RunConfig) -> EngineConfig:
    try:
        return EngineConfig(
            k_max=cfg.k_max, epsilon=cfg.epsilon, window=cfg.window,
            step_rule=cfg.step_rule, encoding=cfg.encoding,
            explore_iters=cfg.explore_iters, objective=cfg.objective,
            seed=cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _planning_params(cfg: RunConfig) -> PlanningParams:
    try:
        return PlanningParams(
            budget=cfg.budget, unit_kw=cfg.unit_kw,
            unit_cost_per_kw=cfg.unit_cost_per_kw,
            size_min_kw=cfg.size_min_kw, size_max_kw=cfg.size_max_kw,
            count_min=cfg.count_min, count_max=cfg.count_max,
            tan_theta=cfg.tan_theta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _resolve_input(token: str, kind: str) -> Path:
    """Map a path or builtin: reference to a file that must exist."""
    if token.startswith(BUILTIN_PREFIX):
        name = token[len(BUILTIN_PREFIX):]
        base = resources.files("dgplan") / "data" / name
        with resources.as_file(base) as real:
            path = Path(real)
        if not path.is_file():
            raise InputError(f"no builtin {kind} named {name!r}")
        return path
    path = Path(token)
    if not path.is_file():
        raise InputError(f"{kind} file not found: {path}")
    return path


def _load_network(cfg: RunConfig):
    path = _resolve_input(cfg.network, "network")
    try:
        return load_network(path)
    except (NetworkError, json.JSONDecodeError, OSError) as exc:
        raise InputError(f"cannot load network {path}: {exc}") from None


def _load_scenarios(cfg: RunConfig) -> ScenarioSet:
    path = _resolve_input(cfg.scenarios, "scenario")
    try:
        return ScenarioSet.from_csv(path)
    except (HistoryFormatError, ValueError, OSError) as exc:
        raise InputError(f"cannot load scenarios {path}: {exc}") from None


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output dir {out}: {exc}") from None
    return out


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(x) -> str:
    return "" if x is None else f"{x:.12g}"


def _plan_line(units: dict, unit_kw: float) -> str:
    placed = {b: n for b, n in units.items() if n}
    if not placed:
        return "no units placed"
    total = sum(placed.values()) * unit_kw
    body = " ".join(f"{b}:{n}" for b, n in sorted(placed.items()))
    return f"{body}  ({total:g} kW)"


def cmd_solve(cfg: RunConfig) -> int:
    """Learn a value function, plan against it, write the run artifacts."""
    try:
        ecfg = _engine_config(cfg)
        params = _planning_params(cfg)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONFIG
    try:
        net = _load_network(cfg)
        scen = _load_scenarios(cfg)
        out = _out_dir(cfg)
        resume = None
        if cfg.resume:
            rpath = Path(cfg.resume)
            if not rpath.is_file():
                raise InputError(f"resume checkpoint not found: {rpath}")
            try:
                resume = json.loads(rpath.read_text())
            except (json.JSONDecodeError, OSError) as exc:
                raise InputError(
                    f"cannot read checkpoint {rpath}: {exc}") from None
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO

    try:
        result = run_spar(ecfg, net, scen, params,
                          checkpoint_path=out / "vfa.json",
                          checkpoint_every=cfg.checkpoint_every,
                          resume=resume)
        sim = RecourseSolver(net, cfg.objective, params.dg_params)
        value = true_expected_value(result.solution.units, net, scen,
                                    cfg.objective, params.dg_params,
                                    recourse=sim)
    except (BackendError, ModelError, MasterInfeasibleError, ValueError,
            RecourseInfeasibleError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_SOLVER

    payload = result.solution.to_json_dict(params.unit_kw)
    payload.update({
        "objective": cfg.objective,
        "encoding": cfg.encoding,
        "seed": cfg.seed,
        "iterations": result.iterations,
        "expected_value": value,
    })
    try:
        _write_json(out / "solution.json", payload)
        write_trace_csv(result.trace, out / "trace.csv")
    except OSError as exc:
        click.echo(f"error: cannot write artifacts: {exc}", err=True)
        return EXIT_IO

    click.echo(f"terminated after {result.iterations} iterations")
    click.echo(f"plan: {_plan_line(result.solution.units, params.unit_kw)}")
    click.echo(f"master objective {_fmt(result.solution.master_objective)}, "
               f"simulated {_fmt(value)}")
    click.echo(f"wrote {out / 'solution.json'}, {out / 'vfa.json'}, "
               f"{out / 'trace.csv'}")
    return 0


def cmd_bounds(cfg: RunConfig) -> int:
    """Estimate statistical bounds and print the summary table."""
    try:
        ecfg = _engine_config(cfg)
        params = _planning_params(cfg)
        if cfg.m_runs < 2:
            raise ConfigError("m_runs must be at least 2")
        if cfg.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if not 0 < cfg.alpha < 0.5:
            raise ConfigError(
                f"alpha must lie in (0, 0.5), got {cfg.alpha}")
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONFIG
    try:
        net = _load_network(cfg)
        scen = _load_scenarios(cfg)
        out = _out_dir(cfg)
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO

    try:
        report, batches = estimate_bounds(
            ecfg, net, scen, params, m_runs=cfg.m_runs,
            batch_size=cfg.batch_size, alpha=cfg.alpha, seed=cfg.seed)
        # one full run for the point estimate shown next to the interval
        full = run_spar(ecfg, net, scen, params)
        sim = RecourseSolver(net, cfg.objective, params.dg_params)
        obj = true_expected_value(full.solution.units, net, scen,
                                  cfg.objective, params.dg_params,
                                  recourse=sim)
    except (BackendError, ModelError, MasterInfeasibleError, ValueError,
            OracleSizeError, RecourseInfeasibleError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_SOLVER

    payload = {
        "report": report.to_json_dict(),
        "scenario_count": len(scen.scenarios),
        "objective_estimate": obj,
        "plan": dict(full.solution.units),
        "batches": [
            {"index": b.index, "scenario_keys": list(b.scenario_keys),
             "batch_optimum": b.batch_optimum, "units": dict(b.units),
             "simulated_value": b.simulated_value}
            for b in batches],
    }
    try:
        _write_json(out / "bounds.json", payload)
    except OSError as exc:
        click.echo(f"error: cannot write artifacts: {exc}", err=True)
        return EXIT_IO

    bg_pct = 100.0 * report.bounds_gap / obj if obj else float("nan")
    lb = f"[{report.lb_ci[0]:.6f}, {report.lb_ci[1]:.6f}]"
    ub = f"[{report.ub_ci[0]:.6f}, {report.ub_ci[1]:.6f}]"
    click.echo(f"{'N_s':>4} {'Obj':>10} {'LB CI':>22} {'UB CI':>22} "
               f"{'BG (%)':>8}")
    click.echo(f"{len(scen.scenarios):>4} {obj:>10.6f} {lb:>22} {ub:>22} "
               f"{bg_pct:>8.2f}")
    click.echo(f"wrote {out / 'bounds.json'}")
    return 0


def cmd_compare(cfg: RunConfig) -> int:
    """Run the learning loop and the exact oracle side by side."""
    try:
        ecfg = _engine_config(cfg)
        params = _planning_params(cfg)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONFIG
    try:
        net = _load_network(cfg)
        scen = _load_scenarios(cfg)
        out = _out_dir(cfg)
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO

    try:
        t0 = time.perf_counter()
        result = run_spar(ecfg, net, scen, params)
        spar_s = time.perf_counter() - t0
        sim = RecourseSolver(net, cfg.objective, params.dg_params)
        spar_obj = true_expected_value(result.solution.units, net, scen,
                                       cfg.objective, params.dg_params,
                                       recourse=sim)
    except (BackendError, ModelError, MasterInfeasibleError, ValueError,
            RecourseInfeasibleError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_SOLVER

    ef_obj = None
    ef_s = None
    refused = False
    try:
        t0 = time.perf_counter()
        _, ef_obj = solve_extensive_form(net, scen, params, cfg.objective)
        ef_s = time.perf_counter() - t0
    except OracleSizeError:
        refused = True
    except (BackendError, ModelError, RecourseInfeasibleError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_SOLVER

    gap_pct = None
    if ef_obj is not None and ef_obj != 0:
        gap_pct = 100.0 * (spar_obj - ef_obj) / ef_obj

    # the CSV carries only seed-determined fields so reruns match exactly
    ef_cell = "refused (size guard)" if refused else _fmt(ef_obj)
    try:
        with open(out / "compare.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "objective", "gap_pct"])
            w.writerow(["spar", _fmt(spar_obj), _fmt(gap_pct)])
            w.writerow(["ef", ef_cell, ""])
    except OSError as exc:
        click.echo(f"error: cannot write artifacts: {exc}", err=True)
        return EXIT_IO

    click.echo(f"{'method':<8} {'objective':>22} {'gap %':>8} {'wall s':>8}")
    click.echo(f"{'spar':<8} {spar_obj:>22.6f} "
               f"{gap_pct if gap_pct is not None else float('nan'):>8.2f} "
               f"{spar_s:>8.2f}")
    if refused:
        click.echo(f"{'ef':<8} {'refused (size guard)':>22} {'':>8} {'':>8}")
    else:
        click.echo(f"{'ef':<8} {ef_obj:>22.6f} {'':>8} {ef_s:>8.2f}")
    click.echo(f"wrote {out / 'compare.csv'}")
    return 0


def cmd_scenarios(cfg: RunConfig) -> int:
    """Reduce a history file to a scenario set and write it as CSV."""
    try:
        if cfg.history is None:
            raise ConfigError("scenario generation needs a history file "
                              "(set `history` in the config)")
        if cfg.n_scenarios <= 0 or cfg.n_scenarios % 24 != 0:
            raise ConfigError("n_scenarios must be a positive multiple of 24")
        if cfg.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONFIG
    try:
        net = _load_network(cfg)
        hpath = _resolve_input(cfg.history, "history")
        try:
            hist = load_history(hpath)
        except HistoryFormatError as exc:
            raise InputError(f"cannot load history {hpath}: {exc}") from None
        out = _out_dir(cfg)
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO

    bus_ids = [b.id for b in net.buses]
    try:
        scen = generate_scenarios(hist, cfg.n_scenarios, cfg.noise_std,
                                  len(bus_ids), cfg.seed, bus_ids=bus_ids)
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONFIG
    try:
        scen.to_csv(out / "scenarios.csv")
    except OSError as exc:
        click.echo(f"error: cannot write artifacts: {exc}", err=True)
        return EXIT_IO
    click.echo(f"wrote {len(scen.scenarios)} scenarios for "
               f"{len(bus_ids)} buses to {out / 'scenarios.csv'}")
    return 0


def _common_options(fn):
    opts = [
        click.option("--config", "config_path", default=None,
                     help="Flat TOML config file."),
        click.option("--seed", type=int, default=None,
                     help="Override the run seed."),
        click.option("--encoding", default=None,
                     type=click.Choice(["lambda", "epigraph"]),
                     help="Master encoding for the learned function."),
        click.option("--objective", default=None,
                     type=click.Choice(["vdev", "ploss"]),
                     help="Dispatch objective."),
        click.option("--out", default=None, help="Output directory."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _dispatch(command, config_path, seed, encoding, objective, out):
    try:
        cfg = _build_config(config_path, seed, encoding, objective, out)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_IO)
    sys.exit(command(cfg))


@click.group()
def main():
    """Plan distributed generation against scenario-driven dispatch."""


@main.command()
@_common_options
def solve(config_path, seed, encoding, objective, out):
    """Learn a plan and write solution, function, and trace files."""
    _dispatch(cmd_solve, config_path, seed, encoding, objective, out)


@main.command()
@_common_options
def bounds(config_path, seed, encoding, objective, out):
    """Estimate confidence bounds around the optimal value."""
    _dispatch(cmd_bounds, config_path, seed, encoding, objective, out)


@main.command()
@_common_options
def compare(config_path, seed, encoding, objective, out):
    """Compare the learned plan against the exact oracle."""
    _dispatch(cmd_compare, config_path, seed, encoding, objective, out)


@main.command()
@_common_options
def scenarios(config_path, seed, encoding, objective, out):
    """Generate a scenario file from an hourly history."""
    _dispatch(cmd_scenarios, config_path, seed, encoding, objective, out)


if __name__ == "__main__":
    main()
