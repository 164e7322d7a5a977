"""Scenario construction from hourly load and PV histories.

A history of D days is reduced to n_t scenarios by splitting it into
n_t/24 contiguous strata, averaging each hour across the days of each
stratum, then perturbing the common profile per bus with Gaussian noise
proportional to the level. One scenario is one (stratum, hour) pair.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "History",
    "HistoryFormatError",
    "Scenario",
    "ScenarioSet",
    "generate_scenarios",
    "load_history",
]

LOAD_CAP = 10.0
PV_CAP = 1.5


class HistoryFormatError(ValueError):
    """Raised on malformed history files; message lists offending lines."""


@dataclass(frozen=True)
class History:
    """Hourly multiplier series covering complete days."""

    days: int
    load: np.ndarray
    pv: np.ndarray

    def __post_init__(self):
        load = np.asarray(self.load, dtype=float)
        pv = np.asarray(self.pv, dtype=float)
        object.__setattr__(self, "load", load)
        object.__setattr__(self, "pv", pv)
        if self.days <= 0:
            raise ValueError("history needs at least one day")
        if load.shape != (24 * self.days,) or pv.shape != (24 * self.days,):
            raise ValueError(
                f"series must have 24*{self.days} entries, "
                f"got {load.shape[0]} load and {pv.shape[0]} pv"
            )
        if np.any(load < 0) or np.any(load > LOAD_CAP):
            raise ValueError(f"load multipliers must lie in [0, {LOAD_CAP}]")
        if np.any(pv < 0) or np.any(pv > PV_CAP):
            raise ValueError(f"pv multipliers must lie in [0, {PV_CAP}]")


@dataclass(frozen=True)
class Scenario:
    """Per-bus multipliers for one realization; key is a stable identifier."""

    key: str
    bus_ids: tuple[str, ...]
    load: np.ndarray
    pv: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bus_ids", tuple(str(b) for b in self.bus_ids))
        object.__setattr__(self, "load", np.asarray(self.load, dtype=float))
        object.__setattr__(self, "pv", np.asarray(self.pv, dtype=float))
        n = len(self.bus_ids)
        if self.load.shape != (n,) or self.pv.shape != (n,):
            raise ValueError("one load and one pv multiplier per bus required")
        if np.any(self.load < 0) or np.any(self.pv < 0):
            raise ValueError("scenario multipliers must be nonnegative")

    def multiplier_map(self, kind: str) -> dict[str, float]:
        series = {"load": self.load, "pv": self.pv}[kind]
        return {b: float(v) for b, v in zip(self.bus_ids, series)}


@dataclass(frozen=True)
class ScenarioSet:
    """Scenarios aligned on a fixed bus ordering, with probabilities."""

    bus_ids: tuple[str, ...]
    scenarios: tuple[Scenario, ...]
    probabilities: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "bus_ids", tuple(str(b) for b in self.bus_ids))
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if self.probabilities is None:
            p = np.full(len(self.scenarios), 1.0 / max(len(self.scenarios), 1))
        else:
            p = np.asarray(self.probabilities, dtype=float)
        object.__setattr__(self, "probabilities", p)
        if p.shape != (len(self.scenarios),):
            raise ValueError("one probability per scenario required")
        if len(self.scenarios) and abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {p.sum():.12g}, not 1")
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        for s in self.scenarios:
            if s.bus_ids != self.bus_ids:
                raise ValueError(f"scenario {s.key} does not cover all buses")
        keys = [s.key for s in self.scenarios]
        if len(set(keys)) != len(keys):
            raise ValueError("scenario keys must be unique")

    def __len__(self) -> int:
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    def __getitem__(self, i: int) -> Scenario:
        return self.scenarios[i]

    def subset(self, indices) -> "ScenarioSet":
        """New set from the selected indices, probabilities renormalized."""
        indices = list(indices)
        picked = [self.scenarios[i] for i in indices]
        p = self.probabilities[indices]
        total = float(p.sum())
        if total <= 0:
            raise ValueError("selected scenarios carry zero probability")
        # repeated picks need distinct keys
        seen: dict[str, int] = {}
        out = []
        for s in picked:
            n = seen.get(s.key, 0)
            seen[s.key] = n + 1
            out.append(s if n == 0 else
                       Scenario(f"{s.key}#{n}", s.bus_ids, s.load, s.pv))
        return ScenarioSet(self.bus_ids, out, p / total)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "probability", "bus",
                        "load_multiplier", "pv_multiplier"])
            for s, p in zip(self.scenarios, self.probabilities):
                for b, ld, pv in zip(self.bus_ids, s.load, s.pv):
                    w.writerow([s.key, f"{p:.17g}", b,
                                f"{ld:.17g}", f"{pv:.17g}"])

    @classmethod
    def from_csv(cls, path) -> "ScenarioSet":
        order: list[str] = []
        rows: dict[str, dict[str, tuple[float, float]]] = {}
        probs: dict[str, float] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            need = {"scenario", "probability", "bus",
                    "load_multiplier", "pv_multiplier"}
            if reader.fieldnames is None or not need.issubset(reader.fieldnames):
                raise HistoryFormatError(
                    f"scenario file needs columns {sorted(need)}"
                )
            for line_no, row in enumerate(reader, start=2):
                try:
                    key = row["scenario"]
                    probs[key] = float(row["probability"])
                    pair = (float(row["load_multiplier"]),
                            float(row["pv_multiplier"]))
                except (TypeError, ValueError) as exc:
                    raise HistoryFormatError(
                        f"line {line_no}: {exc}") from exc
                if key not in rows:
                    rows[key] = {}
                    order.append(key)
                rows[key][row["bus"]] = pair
        if not order:
            raise HistoryFormatError("scenario file holds no data rows")
        bus_ids = list(rows[order[0]])
        scenarios = []
        for key in order:
            if list(rows[key]) != bus_ids:
                raise HistoryFormatError(
                    f"scenario {key} covers different buses than {order[0]}"
                )
            load = np.array([rows[key][b][0] for b in bus_ids])
            pv = np.array([rows[key][b][1] for b in bus_ids])
            scenarios.append(Scenario(key, tuple(bus_ids), load, pv))
        return cls(tuple(bus_ids), scenarios,
                   np.array([probs[k] for k in order]))


def generate_scenarios(hist: History, n_t: int, noise_std: float,
                       bus_count: int, seed: int,
                       bus_ids=None) -> ScenarioSet:
    """Reduce a history to n_t scenarios with per-bus Gaussian deviations.

    n_t must be a positive multiple of 24 and the history must hold at
    least n_t/24 days. Each stratum of floor(days/S) consecutive days is
    averaged per hour; surplus trailing days are ignored. Bus deviations
    are zero mean with standard deviation noise_std times the common
    value, clamped below at zero.
    """
    if n_t <= 0 or n_t % 24 != 0:
        raise ValueError(f"n_t must be a positive multiple of 24, got {n_t}")
    n_strata = n_t // 24
    if hist.days < n_strata:
        raise ValueError(
            f"history has {hist.days} days, need at least {n_strata}"
        )
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    if bus_count < 1:
        raise ValueError("bus_count must be positive")
    if bus_ids is None:
        width = len(str(bus_count - 1))
        bus_ids = [f"bus{idx:0{width}d}" for idx in range(bus_count)]
    elif len(bus_ids) != bus_count:
        raise ValueError("bus_ids length must equal bus_count")

    days_per = hist.days // n_strata
    load_by_day = hist.load.reshape(hist.days, 24)
    pv_by_day = hist.pv.reshape(hist.days, 24)
    rng = np.random.default_rng(seed)
    ids = tuple(str(b) for b in bus_ids)
    width = len(str(n_t - 1))
    scenarios = []
    for s in range(n_strata):
        block = slice(s * days_per, (s + 1) * days_per)
        common_load = load_by_day[block].mean(axis=0)
        common_pv = pv_by_day[block].mean(axis=0)
        for h in range(24):
            idx = s * 24 + h
            z_load = rng.standard_normal(bus_count)
            z_pv = rng.standard_normal(bus_count)
            load = np.maximum(0.0, common_load[h] * (1.0 + noise_std * z_load))
            pv = np.maximum(0.0, common_pv[h] * (1.0 + noise_std * z_pv))
            scenarios.append(Scenario(f"s{idx:0{width}d}", ids, load, pv))
    return ScenarioSet(ids, scenarios)


def load_history(path) -> History:
    """Read a day,hour,load_multiplier,pv_multiplier CSV into a History.

    Every day present must cover hours 0..23 exactly once; multiplier
    bounds are load in [0, 10] and pv in [0, 1.5]. Violations raise
    HistoryFormatError listing the offending lines.
    """
    values: dict[tuple[int, int], tuple[float, float]] = {}
    problems: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"day", "hour", "load_multiplier", "pv_multiplier"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise HistoryFormatError(
                f"history file needs columns {sorted(need)}"
            )
        for line_no, row in enumerate(reader, start=2):
            try:
                day = int(row["day"])
                hour = int(row["hour"])
                ld = float(row["load_multiplier"])
                pv = float(row["pv_multiplier"])
            except (TypeError, ValueError):
                problems.append(f"line {line_no}: malformed row {row}")
                continue
            if not 0 <= hour <= 23:
                problems.append(f"line {line_no}: hour {hour} out of range")
                continue
            if not 0 <= ld <= LOAD_CAP:
                problems.append(
                    f"line {line_no}: load multiplier {ld} outside [0, {LOAD_CAP}]"
                )
            if not 0 <= pv <= PV_CAP:
                problems.append(
                    f"line {line_no}: pv multiplier {pv} outside [0, {PV_CAP}]"
                )
            if (day, hour) in values:
                problems.append(f"line {line_no}: duplicate day {day} hour {hour}")
            values[(day, hour)] = (ld, pv)
    day_labels = sorted({d for d, _ in values})
    for d in day_labels:
        missing = [h for h in range(24) if (d, h) not in values]
        if missing:
            problems.append(f"day {d}: missing hours {missing}")
    if problems:
        raise HistoryFormatError("; ".join(problems))
    if not day_labels:
        raise HistoryFormatError("history file holds no data rows")
    load = np.array([values[(d, h)][0] for d in day_labels for h in range(24)])
    pv = np.array([values[(d, h)][1] for d in day_labels for h in range(24)])
    return History(days=len(day_labels), load=load, pv=pv)
