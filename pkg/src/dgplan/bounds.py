"""Posterior statistical bounds on the optimal planning value.

The lower bound comes from optimal values of small-batch sample average
problems, the upper bound from full simulation of plans obtained on those
batches.  Both are plain mean / standard-error constructions; the report
layer widens the interval with Student t quantiles when the number of
batches is small.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .engine import EngineConfig, run_spar
from .gridmodel import Network
from .master import PlanningParams
from .oracle import RecourseSolver, solve_extensive_form, true_expected_value
from .scenarios import ScenarioSet

T_SWITCH_M = 30


def _mean_sigma(values) -> tuple[float, float]:
    vals = np.asarray(list(values), dtype=float)
    m = vals.size
    if m < 2:
        raise ValueError(f"need at least 2 values for a standard error, got {m}")
    mean = float(vals.mean())
    sigma = float(np.sqrt(np.sum((vals - mean) ** 2) / (m * (m - 1))))
    return mean, sigma


def upper_bound(h_values, alpha: float) -> tuple[float, float, tuple[float, float]]:
    """Mean, standard error and normal-quantile interval of simulated costs.

    Each h value is the full-simulation expected cost of one candidate
    plan, so the mean over plans estimates from above the best achievable
    expected cost.
    """
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must be in (0, 0.5), got {alpha}")
    mean, sigma = _mean_sigma(h_values)
    z = float(stats.norm.ppf(1.0 - alpha))
    return mean, sigma, (mean - z * sigma, mean + z * sigma)


def lower_bound(p_values, alpha: float) -> tuple[float, float, tuple[float, float]]:
    """Same construction over batch optimal values.

    A batch optimum underestimates the full-problem optimum in
    expectation, which makes the interval a statistical lower bound.
    """
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must be in (0, 0.5), got {alpha}")
    mean, sigma = _mean_sigma(p_values)
    z = float(stats.norm.ppf(1.0 - alpha))
    return mean, sigma, (mean - z * sigma, mean + z * sigma)


@dataclass(frozen=True)
class BoundsReport:
    ub_mean: float
    ub_sigma: float
    ub_ci: tuple[float, float]
    lb_mean: float
    lb_sigma: float
    lb_ci: tuple[float, float]
    bounds_gap: float
    confidence: float
    quantile_kind: str

    def __post_init__(self):
        if self.quantile_kind not in ("normal", "student_t"):
            raise ValueError(f"unknown quantile kind {self.quantile_kind!r}")

    def to_json_dict(self) -> dict:
        return {
            "ub_mean": self.ub_mean,
            "ub_sigma": self.ub_sigma,
            "ub_ci": list(self.ub_ci),
            "lb_mean": self.lb_mean,
            "lb_sigma": self.lb_sigma,
            "lb_ci": list(self.lb_ci),
            "bounds_gap": self.bounds_gap,
            "confidence": self.confidence,
            "quantile_kind": self.quantile_kind,
        }


@dataclass(frozen=True)
class BatchResult:
    index: int
    scenario_keys: tuple[str, ...]
    batch_optimum: float
    units: dict
    simulated_value: float


def _draw_batches(rng, scen: ScenarioSet, m_runs: int, batch_size: int):
    """Index lists per batch: a disjoint partition of a permutation while
    the pool is large enough, independent redraws otherwise."""
    n = len(scen.scenarios)
    if m_runs * batch_size <= n:
        perm = rng.permutation(n)
        return [perm[m * batch_size:(m + 1) * batch_size].tolist()
                for m in range(m_runs)]
    p = np.asarray(scen.probabilities)
    return [rng.choice(n, size=batch_size, replace=True, p=p).tolist()
            for m in range(m_runs)]


def estimate_bounds(cfg: EngineConfig, net: Network, scen: ScenarioSet,
                    params: PlanningParams, m_runs: int, batch_size: int,
                    alpha: float = 0.05, seed: int = 0, backend=None,
                    ) -> tuple[BoundsReport, list[BatchResult]]:
    """Run the batch estimation loop and aggregate both bounds.

    For each of the m_runs batches: solve the batch problem exactly for
    the lower-bound sample, run the adaptive method on the same batch for
    a candidate plan, then score that plan by full simulation over every
    scenario for the upper-bound sample.
    """
    if m_runs < 2:
        raise ValueError(f"need at least 2 batches, got {m_runs}")
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    rng = np.random.default_rng(seed)
    batches = _draw_batches(rng, scen, m_runs, batch_size)
    run_seeds = np.random.SeedSequence(seed).generate_state(m_runs)

    sim = RecourseSolver(net, cfg.objective, params.dg_params)
    p_values = []
    h_values = []
    details = []
    for m, idx in enumerate(batches):
        batch = scen.subset(idx)
        _, p_m = solve_extensive_form(net, batch, params, cfg.objective,
                                      backend=backend)
        run_cfg = replace(cfg, seed=int(run_seeds[m] % 2**31))
        result = run_spar(run_cfg, net, batch, params, backend=backend)
        h_m = true_expected_value(result.solution.units, net, scen,
                                  cfg.objective, params.dg_params,
                                  recourse=sim)
        p_values.append(p_m)
        h_values.append(h_m)
        details.append(BatchResult(
            index=m,
            scenario_keys=tuple(s.key for s in batch.scenarios),
            batch_optimum=p_m,
            units=dict(result.solution.units),
            simulated_value=h_m,
        ))

    ub_mean, ub_sigma, _ = upper_bound(h_values, alpha)
    lb_mean, lb_sigma, _ = lower_bound(p_values, alpha)
    if m_runs < T_SWITCH_M:
        q = float(stats.t.ppf(1.0 - alpha, df=m_runs - 1))
        kind = "student_t"
    else:
        q = float(stats.norm.ppf(1.0 - alpha))
        kind = "normal"
    ub_ci = (ub_mean - q * ub_sigma, ub_mean + q * ub_sigma)
    lb_ci = (lb_mean - q * lb_sigma, lb_mean + q * lb_sigma)
    report = BoundsReport(
        ub_mean=ub_mean, ub_sigma=ub_sigma, ub_ci=ub_ci,
        lb_mean=lb_mean, lb_sigma=lb_sigma, lb_ci=lb_ci,
        bounds_gap=ub_ci[1] - lb_ci[0],
        confidence=1.0 - 2.0 * alpha,
        quantile_kind=kind,
    )
    return report, details
