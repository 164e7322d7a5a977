"""Separable piecewise linear convex value function approximation.

Each linking coordinate (a candidate DG bus) gets one convex piecewise linear
coordinate function over consecutive integer breakpoints, represented by its
slope vector. The learning loop perturbs one slope at a time and restores
convexity by projecting the slope vector back onto the isotone cone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CoordinateFunction",
    "CoordinateFunctionSet",
    "project_isotone",
]


class BreakpointDomainError(ValueError):
    """Raised when an evaluation or update point is outside the breakpoint range."""


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CoordinateFunction:
    """One convex piecewise linear coordinate function g over [lower_break, upper_break].

    slopes[j] is the slope on the segment [lower_break + j, lower_break + j + 1].
    The value at lower_break is anchored at 0; the additive constant does not
    move decision points so nothing is lost.
    """

    lower_break: int
    upper_break: int
    slopes: np.ndarray

    def __post_init__(self) -> None:
        if self.upper_break <= self.lower_break:
            raise ValueError("upper_break must exceed lower_break")
        slopes = _as_readonly(self.slopes)
        if slopes.shape != (self.upper_break - self.lower_break,):
            raise ValueError(
                f"expected {self.upper_break - self.lower_break} slopes, "
                f"got shape {slopes.shape}"
            )
        object.__setattr__(self, "slopes", slopes)

    @classmethod
    def zeros(cls, lower_break: int, upper_break: int) -> "CoordinateFunction":
        return cls(lower_break, upper_break, np.zeros(upper_break - lower_break))

    @property
    def num_segments(self) -> int:
        return self.upper_break - self.lower_break

    def is_isotone(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.diff(self.slopes) >= -tol))

    def evaluate(self, x: float) -> float:
        """Value of g at x, anchored at g(lower_break) = 0.

        Exact at integer breakpoints, affine in between.
        """
        if not (self.lower_break <= x <= self.upper_break):
            raise BreakpointDomainError(
                f"x={x} outside [{self.lower_break}, {self.upper_break}]"
            )
        u = int(np.floor(x))
        if u == self.upper_break:
            u -= 1
        j = u - self.lower_break
        return float(np.sum(self.slopes[:j]) + self.slopes[j] * (x - u))

    def breakpoint_values(self) -> np.ndarray:
        """g at every integer breakpoint: [0, m0, m0+m1, ...]."""
        out = np.empty(self.num_segments + 1)
        out[0] = 0.0
        np.cumsum(self.slopes, out=out[1:])
        return out

    def slope_update(self, l: int, gamma: float, alpha: float) -> np.ndarray:
        """Raw single-point slope relaxation toward an observed subgradient.

        Returns a fresh vector n with n[l] = (1 - alpha) m[l] + alpha * gamma
        and every other entry untouched. The caller re-projects afterwards.
        """
        if not (self.lower_break <= l < self.upper_break):
            raise BreakpointDomainError(
                f"segment index l={l} outside [{self.lower_break}, {self.upper_break})"
            )
        if not (0.0 < alpha <= 1.0):
            raise ValueError(f"alpha={alpha} outside (0, 1]")
        j = l - self.lower_break
        n = np.array(self.slopes)
        n[j] = (1.0 - alpha) * n[j] + alpha * gamma
        return n

    def replace_slopes(self, slopes: np.ndarray) -> "CoordinateFunction":
        return CoordinateFunction(self.lower_break, self.upper_break, slopes)


def project_isotone(n: Sequence[float], l_updated: int) -> np.ndarray:
    """Euclidean projection onto {m : m[j] <= m[j+1]} after a one-point update.

    Assumes n was isotone before entry l_updated changed, so any violation is
    local to that entry. Pooling outward from l_updated until the window mean
    clears its neighbor reproduces the exact projection; ties need no action
    because the cone constraint is non-strict.
    """
    m = np.array(n, dtype=float)
    size = m.size
    if not (0 <= l_updated < size):
        raise BreakpointDomainError(f"l_updated={l_updated} outside [0, {size})")
    if size == 1:
        return m
    l = l_updated
    if l > 0 and m[l - 1] > m[l]:
        # pool leftward: smallest window whose mean clears the left neighbor
        total = m[l]
        eta = 0
        for cand in range(l - 1, 0, -1):
            total += m[cand]
            if m[cand - 1] <= total / (l - cand + 1):
                eta = cand
                break
        m[eta : l + 1] = np.mean(m[eta : l + 1])
    elif l < size - 1 and m[l] > m[l + 1]:
        # pool rightward, mirror image
        total = m[l]
        eta = size - 1
        for cand in range(l + 1, size - 1):
            total += m[cand]
            if m[cand + 1] >= total / (cand - l + 1):
                eta = cand
                break
        m[l : eta + 1] = np.mean(m[l : eta + 1])
    return m


@dataclass
class CoordinateFunctionSet:
    """One coordinate function per linking coordinate, in a fixed order.

    names, when given, label the coordinates (bus ids for the DG problem) and
    must match the function count.
    """

    functions: list[CoordinateFunction]
    names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self) -> None:
        if self.names is not None and len(self.names) != len(self.functions):
            raise ValueError("names length must match functions length")

    @classmethod
    def zeros(
        cls,
        count: int,
        lower_break: int,
        upper_break: int,
        names: Iterable[str] | None = None,
    ) -> "CoordinateFunctionSet":
        return cls(
            [CoordinateFunction.zeros(lower_break, upper_break) for _ in range(count)],
            tuple(names) if names is not None else None,
        )

    def __len__(self) -> int:
        return len(self.functions)

    def __iter__(self):
        return iter(self.functions)

    def __getitem__(self, key) -> CoordinateFunction:
        if isinstance(key, str):
            if self.names is None:
                raise KeyError("set has no coordinate names")
            return self.functions[self.names.index(key)]
        return self.functions[key]

    def total_value(self, x: Sequence[float]) -> float:
        if len(x) != len(self.functions):
            raise ValueError("point length must match function count")
        return float(sum(f.evaluate(xi) for f, xi in zip(self.functions, x)))

    def to_json_dict(self) -> dict:
        out = []
        for i, f in enumerate(self.functions):
            entry = {
                "lower_break": f.lower_break,
                "upper_break": f.upper_break,
                "slopes": [float(s) for s in f.slopes],
            }
            if self.names is not None:
                entry["coordinate"] = self.names[i]
            out.append(entry)
        return {"functions": out}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "CoordinateFunctionSet":
        funcs = []
        names = []
        for entry in doc["functions"]:
            funcs.append(
                CoordinateFunction(
                    int(entry["lower_break"]),
                    int(entry["upper_break"]),
                    np.asarray(entry["slopes"], dtype=float),
                )
            )
            names.append(entry.get("coordinate"))
        have_names = all(n is not None for n in names) and names
        return cls(funcs, tuple(names) if have_names else None)

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "CoordinateFunctionSet":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))
