"""Small dense two-phase simplex used as an independent LP oracle in tests.

Bland's rule everywhere, so cycling cannot occur; dense numpy linear algebra,
so no external solver is involved. Intended for models up to roughly 50 by 50
and never for production solves.
"""

from __future__ import annotations

import numpy as np

from .mpif import ModelSpec, SolveOutcome, compile_model

__all__ = ["DenseSimplex", "SimplexError"]

PIVOT_TOL = 1e-9
MAX_ITER = 20000
SIZE_LIMIT = 80


class SimplexError(RuntimeError):
    pass


class _Standard:
    """min c x, A x = b, x >= 0, with bookkeeping back to the source model.

    Bounded variables are shifted to zero lower bound; finite upper bounds
    become extra cap rows; free variables are split.
    """

    def __init__(self, cm):
        n = len(cm.var_names)
        if cm.is_mip or cm.quad:
            raise SimplexError("dense oracle handles pure LPs only")
        if n > SIZE_LIMIT or cm.A_ub.shape[0] + cm.A_eq.shape[0] > SIZE_LIMIT:
            raise SimplexError("model too large for the dense oracle")

        m_ub, m_eq = cm.A_ub.shape[0], cm.A_eq.shape[0]
        A_src = np.vstack([cm.A_ub.toarray(), cm.A_eq.toarray()]) \
            if m_ub + m_eq else np.zeros((0, n))
        b_src = np.concatenate([cm.b_ub, cm.b_eq])
        m0 = m_ub + m_eq

        offsets = np.zeros(n)
        col_defs: list[tuple[int, float]] = []  # (source var, scale)
        cap_rows: list[tuple[int, float]] = []  # (column, rhs)
        for j in range(n):
            lo, hi = cm.lb[j], cm.ub[j]
            if np.isfinite(lo):
                offsets[j] = lo
                col_defs.append((j, 1.0))
                if np.isfinite(hi):
                    cap_rows.append((len(col_defs) - 1, hi - lo))
            elif np.isfinite(hi):
                offsets[j] = hi
                col_defs.append((j, -1.0))
            else:
                col_defs.append((j, 1.0))
                col_defs.append((j, -1.0))

        n_struct = len(col_defs)
        m = m0 + len(cap_rows)
        A = np.zeros((m, n_struct))
        costs = np.zeros(n_struct)
        for k, (j, scale) in enumerate(col_defs):
            A[:m0, k] = scale * A_src[:, j]
            costs[k] = scale * cm.c[j]
        b = np.zeros(m)
        b[:m0] = b_src - A_src @ offsets
        for r, (k, rhs) in enumerate(cap_rows):
            A[m0 + r, k] = 1.0
            b[m0 + r] = rhs

        # slack columns: declared <= rows and every cap row
        slack_rows = list(range(m_ub)) + list(range(m0, m))
        S = np.zeros((m, len(slack_rows)))
        for k, r in enumerate(slack_rows):
            S[r, k] = 1.0
        self.A = np.column_stack([A, S])
        self.b = b
        self.c = np.concatenate([costs, np.zeros(len(slack_rows))])
        self.m = m
        self.m_ub = m_ub
        self.m_eq = m_eq
        self.offsets = offsets
        self.col_defs = col_defs
        self.n_struct = n_struct


class DenseSimplex:
    """Backend-compatible facade over the dense two-phase simplex."""

    def solve(self, model: ModelSpec) -> SolveOutcome:
        cm = compile_model(model)
        std = _Standard(cm)
        A = std.A.copy()
        b = std.b.copy()
        m = std.m

        flips = np.where(b < 0, -1.0, 1.0)
        A *= flips[:, None]
        b = b * flips

        n_total = A.shape[1]
        A1 = np.column_stack([A, np.eye(m)])
        c1 = np.concatenate([np.zeros(n_total), np.ones(m)])
        basis = list(range(n_total, n_total + m))
        status, basis = _iterate(A1, b, c1, basis)
        if status != "optimal":
            raise SimplexError("phase one did not terminate cleanly")
        xB = np.linalg.solve(A1[:, basis], b)
        phi = float(c1[basis] @ xB)
        if phi > 1e-7:
            y1 = np.linalg.solve(A1[:, basis].T, c1[basis])
            return SolveOutcome(
                status="infeasible",
                farkas_ray=self._ray(cm, std, flips, y1),
                infeasibility=phi,
            )

        # purge redundant rows whose artificial cannot leave the basis
        keep = self._purge_artificials(A1, basis, n_total)
        if keep is not None:
            dropped = {n_total + r for r in np.nonzero(~keep)[0]}
            basis = [v for v in basis if v not in dropped]
            A1, b = A1[keep], b[keep]
        c2 = np.concatenate([std.c, np.zeros(m)])
        status, basis = _iterate(A1, b, c2, basis, forbid=set(range(n_total, A1.shape[1])))
        if status == "unbounded":
            return SolveOutcome(status="unbounded", message="dense oracle: unbounded")
        xB = np.linalg.solve(A1[:, basis], b)
        x_std = np.zeros(A1.shape[1])
        x_std[basis] = xB

        x = np.array(std.offsets)
        for k, (j, scale) in enumerate(std.col_defs):
            x[j] += scale * x_std[k]
        obj = float(cm.c @ x) + cm.obj_const
        y_part = np.linalg.solve(A1[:, basis].T, c2[basis])
        y = np.zeros(m)
        rows_kept = np.arange(m) if keep is None else np.nonzero(keep)[0]
        y[rows_kept] = y_part
        return SolveOutcome(
            status="optimal",
            primal={nm: float(v) for nm, v in zip(cm.var_names, x)},
            objective_value=obj,
            duals=self._duals(cm, std, flips, y),
        )

    @staticmethod
    def _purge_artificials(A1, basis, n_total):
        """Rows with a stuck zero-level artificial are redundant; mark removals."""
        removal = []
        for pos, var in enumerate(basis):
            if var < n_total:
                continue
            Binv_row = np.linalg.solve(A1[:, basis], A1)[pos, :n_total]
            cand = np.nonzero(np.abs(Binv_row) > PIVOT_TOL)[0]
            if cand.size:
                basis[pos] = int(cand[0])
            else:
                removal.append(var - n_total)
        if not removal:
            return None
        keep = np.ones(A1.shape[0], dtype=bool)
        keep[removal] = False
        return keep

    @staticmethod
    def _duals(cm, std, flips, y) -> dict[str, float]:
        duals = {}
        for r in range(std.m_ub):
            val = -flips[r] * y[r]
            if cm.ub_flipped[r]:
                val = -val
            duals[cm.ub_tags[r]] = float(val)
        for k in range(std.m_eq):
            r = std.m_ub + k
            duals[cm.eq_tags[k]] = float(-flips[r] * y[r])
        return duals

    @staticmethod
    def _ray(cm, std, flips, y1) -> dict[str, float]:
        # weights in each row's natural direction; nonnegative on inequalities
        ray = {}
        for r in range(std.m_ub):
            ray[cm.ub_tags[r]] = float(-flips[r] * y1[r])
        for k in range(std.m_eq):
            r = std.m_ub + k
            ray[cm.eq_tags[k]] = float(flips[r] * y1[r])
        return ray


def _iterate(A, b, c, basis, forbid=frozenset()):
    """Revised simplex loop with Bland's rule; returns (status, basis)."""
    m = A.shape[0]
    for _ in range(MAX_ITER):
        B = A[:, basis]
        try:
            xB = np.linalg.solve(B, b)
            y = np.linalg.solve(B.T, c[basis])
        except np.linalg.LinAlgError as exc:
            raise SimplexError(f"singular basis: {exc}") from exc
        reduced = c - A.T @ y
        in_basis = np.zeros(A.shape[1], dtype=bool)
        in_basis[basis] = True
        candidates = [
            j for j in np.nonzero(reduced < -PIVOT_TOL)[0]
            if not in_basis[j] and j not in forbid
        ]
        if not candidates:
            return "optimal", basis
        j = int(candidates[0])  # Bland: smallest index enters
        d = np.linalg.solve(B, A[:, j])
        pos = d > PIVOT_TOL
        if not np.any(pos):
            return "unbounded", basis
        ratios = np.full(m, np.inf)
        ratios[pos] = xB[pos] / d[pos]
        rmin = np.min(ratios)
        ties = np.nonzero(ratios <= rmin + PIVOT_TOL)[0]
        leave_pos = min(ties, key=lambda p: basis[p])  # Bland: smallest leaving var
        basis[leave_pos] = j
    raise SimplexError("iteration limit hit")
