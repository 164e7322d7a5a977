"""Mathematical program interface.

Every optimization model in the package is declared once as a solver-agnostic
ModelSpec and handed to a backend. The default backend compiles the spec to
arrays and drives scipy's HiGHS wrappers for LPs and MILPs and cvxopt for
convex QPs. Inequality duals follow the convention of the Lagrangian
L = f + y^T (A x - b): duals of <= rows are nonnegative, duals of >= rows are
nonpositive. When a continuous model is infeasible an elastic phase-I solve
yields Farkas weights per constraint tag, reported in each row's natural
direction (nonnegative for inequalities).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint as _ScipyLinear, linprog, milp

__all__ = [
    "Variable",
    "Constraint",
    "ModelSpec",
    "SolveOutcome",
    "CompiledModel",
    "ScipyBackend",
    "ModelError",
    "BackendError",
    "write_lp",
]

VarKind = Literal["continuous", "binary", "integer"]
Sense = Literal["<=", "=", ">="]

FEASIBILITY_TOL = 1e-6


class ModelError(ValueError):
    """Malformed model: undeclared variables, duplicate tags, bad senses."""


class BackendError(RuntimeError):
    """The solver failed in a way that cannot be mapped to a clean status."""


@dataclass(frozen=True)
class Variable:
    name: str
    kind: VarKind = "continuous"
    lb: float = 0.0
    ub: float = np.inf


@dataclass(frozen=True)
class Constraint:
    coeffs: Mapping[str, float]
    sense: Sense
    rhs: float
    tag: str


@dataclass
class ModelSpec:
    """Linear or convex-quadratic model, minimize sense.

    objective_quad maps (var, var) pairs to coefficients of x_u * x_v. Only
    diagonal (squared) terms arise in this package but symmetric pairs are
    accepted.
    """

    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: dict[str, float] = field(default_factory=dict)
    objective_quad: dict[tuple[str, str], float] = field(default_factory=dict)
    objective_const: float = 0.0

    def add_variable(self, name: str, kind: VarKind = "continuous",
                     lb: float = 0.0, ub: float = np.inf) -> str:
        self.variables.append(Variable(name, kind, lb, ub))
        return name

    def add_constraint(self, coeffs: Mapping[str, float], sense: Sense,
                       rhs: float, tag: str) -> None:
        self.constraints.append(Constraint(dict(coeffs), sense, rhs, tag))

    @property
    def is_continuous(self) -> bool:
        return all(v.kind == "continuous" for v in self.variables)

    @property
    def has_quadratic(self) -> bool:
        return bool(self.objective_quad)

    def validate(self) -> None:
        names = [v.name for v in self.variables]
        declared = set(names)
        if len(declared) != len(names):
            raise ModelError("duplicate variable names")
        tags = set()
        for con in self.constraints:
            if con.sense not in ("<=", "=", ">="):
                raise ModelError(f"bad sense {con.sense!r} on {con.tag}")
            if con.tag in tags:
                raise ModelError(f"duplicate constraint tag {con.tag!r}")
            tags.add(con.tag)
            missing = set(con.coeffs) - declared
            if missing:
                raise ModelError(f"constraint {con.tag} references {sorted(missing)}")
        for (u, v), q in self.objective_quad.items():
            if u not in declared or v not in declared:
                raise ModelError(f"quadratic term references undeclared ({u},{v})")
            if u == v and q < 0:
                raise ModelError("negative diagonal quadratic coefficient")
        off_diag = [k for k in self.objective_quad if k[0] != k[1]]
        if off_diag:
            self._check_psd()
        missing = set(self.objective) - declared
        if missing:
            raise ModelError(f"objective references {sorted(missing)}")

    def _check_psd(self) -> None:
        names = sorted({n for pair in self.objective_quad for n in pair})
        idx = {n: i for i, n in enumerate(names)}
        P = np.zeros((len(names), len(names)))
        for (u, v), q in self.objective_quad.items():
            P[idx[u], idx[v]] += q / 2.0
            P[idx[v], idx[u]] += q / 2.0
        if np.min(np.linalg.eigvalsh(P)) < -1e-9:
            raise ModelError("quadratic objective is not positive semidefinite")


@dataclass
class SolveOutcome:
    status: Literal["optimal", "infeasible", "unbounded", "error"]
    primal: dict[str, float] | None = None
    objective_value: float | None = None
    duals: dict[str, float] | None = None
    farkas_ray: dict[str, float] | None = None
    infeasibility: float | None = None
    message: str = ""


@dataclass
class CompiledModel:
    """Array form of a ModelSpec; >= rows are negated into the <= block."""

    var_names: list[str]
    var_index: dict[str, int]
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray
    c: np.ndarray
    obj_const: float
    quad: dict[tuple[int, int], float]
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    ub_tags: list[str]
    ub_flipped: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    eq_tags: list[str]

    @property
    def is_mip(self) -> bool:
        return bool(self.integrality.any())

    def row_index(self, tag: str) -> tuple[str, int]:
        """Locate a tag in the compiled blocks: ('ub'|'eq', position)."""
        try:
            return "ub", self.ub_tags.index(tag)
        except ValueError:
            return "eq", self.eq_tags.index(tag)


def compile_model(model: ModelSpec) -> CompiledModel:
    model.validate()
    var_names = [v.name for v in model.variables]
    var_index = {n: i for i, n in enumerate(var_names)}
    n = len(var_names)
    lb = np.array([v.lb for v in model.variables], dtype=float)
    ub = np.array([v.ub for v in model.variables], dtype=float)
    integrality = np.array(
        [0 if v.kind == "continuous" else 1 for v in model.variables], dtype=int
    )
    for v in model.variables:
        if v.kind == "binary":
            i = var_index[v.name]
            lb[i] = max(lb[i], 0.0)
            ub[i] = min(ub[i], 1.0)
    if np.any(lb > ub):
        bad = [var_names[i] for i in np.nonzero(lb > ub)[0]]
        raise ModelError(f"lower bound exceeds upper bound on {bad}")
    c = np.zeros(n)
    for name, coef in model.objective.items():
        c[var_index[name]] += coef
    quad = {
        (var_index[u], var_index[v]): q for (u, v), q in model.objective_quad.items()
    }

    ub_rows: list[tuple[int, int, float]] = []
    ub_rhs: list[float] = []
    ub_tags: list[str] = []
    ub_flip: list[bool] = []
    eq_rows: list[tuple[int, int, float]] = []
    eq_rhs: list[float] = []
    eq_tags: list[str] = []
    for con in model.constraints:
        if con.sense == "=":
            r = len(eq_rhs)
            for name, coef in con.coeffs.items():
                eq_rows.append((r, var_index[name], coef))
            eq_rhs.append(con.rhs)
            eq_tags.append(con.tag)
        else:
            sign = 1.0 if con.sense == "<=" else -1.0
            r = len(ub_rhs)
            for name, coef in con.coeffs.items():
                ub_rows.append((r, var_index[name], sign * coef))
            ub_rhs.append(sign * con.rhs)
            ub_tags.append(con.tag)
            ub_flip.append(con.sense == ">=")

    def to_csr(rows, nrows):
        if not nrows:
            return sp.csr_matrix((0, n))
        if rows:
            r, cidx, data = zip(*rows)
        else:
            r, cidx, data = (), (), ()
        return sp.csr_matrix(
            (np.array(data, dtype=float), (np.array(r), np.array(cidx))),
            shape=(nrows, n),
        )

    return CompiledModel(
        var_names=var_names,
        var_index=var_index,
        lb=lb,
        ub=ub,
        integrality=integrality,
        c=c,
        obj_const=model.objective_const,
        quad=quad,
        A_ub=to_csr(ub_rows, len(ub_rhs)),
        b_ub=np.array(ub_rhs, dtype=float),
        ub_tags=ub_tags,
        ub_flipped=np.array(ub_flip, dtype=bool),
        A_eq=to_csr(eq_rows, len(eq_rhs)),
        b_eq=np.array(eq_rhs, dtype=float),
        eq_tags=eq_tags,
    )


class ScipyBackend:
    """LP/MILP via scipy (HiGHS), convex QP via cvxopt.

    mip_rel_gap keeps master solves near-exact; feasibility of reported optima
    is re-checked against the compiled rows so a wrong status never leaks out.
    """

    def __init__(self, mip_rel_gap: float = 1e-6, feasibility_tol: float = FEASIBILITY_TOL):
        self.mip_rel_gap = mip_rel_gap
        self.feasibility_tol = feasibility_tol

    def solve(self, model: ModelSpec, dump_path: str | None = None) -> SolveOutcome:
        compiled = compile_model(model)
        if dump_path is not None:
            write_lp(model, dump_path)
        return self.solve_compiled(compiled)

    def solve_compiled(self, cm: CompiledModel,
                       b_ub: np.ndarray | None = None,
                       b_eq: np.ndarray | None = None) -> SolveOutcome:
        """Solve a compiled model, optionally overriding rhs vectors.

        The override hooks let hot loops patch scenario or capacity data into
        a prebuilt model without rebuilding rows.
        """
        b_ub = cm.b_ub if b_ub is None else b_ub
        b_eq = cm.b_eq if b_eq is None else b_eq
        if cm.quad and cm.is_mip:
            raise ModelError("integer models with quadratic objectives are not supported")
        if cm.quad:
            return self._solve_qp(cm, b_ub, b_eq)
        if cm.is_mip:
            return self._solve_milp(cm, b_ub, b_eq)
        return self._solve_lp(cm, b_ub, b_eq)

    # -- LP ---------------------------------------------------------------

    def _solve_lp(self, cm: CompiledModel, b_ub, b_eq) -> SolveOutcome:
        res = linprog(
            cm.c,
            A_ub=cm.A_ub if cm.A_ub.shape[0] else None,
            b_ub=b_ub if cm.A_ub.shape[0] else None,
            A_eq=cm.A_eq if cm.A_eq.shape[0] else None,
            b_eq=b_eq if cm.A_eq.shape[0] else None,
            bounds=np.column_stack([cm.lb, cm.ub]),
            method="highs",
        )
        if res.status == 0:
            duals = {}
            if cm.A_ub.shape[0]:
                marg = np.asarray(res.ineqlin.marginals)
                y = -marg
                y[cm.ub_flipped] = marg[cm.ub_flipped]
                for tag, val in zip(cm.ub_tags, y):
                    duals[tag] = float(val)
            if cm.A_eq.shape[0]:
                for tag, val in zip(cm.eq_tags, -np.asarray(res.eqlin.marginals)):
                    duals[tag] = float(val)
            return self._optimal_outcome(cm, res.x, duals, b_ub, b_eq)
        if res.status == 2:
            ray, phi = self._farkas(cm, b_ub, b_eq)
            return SolveOutcome(status="infeasible", farkas_ray=ray, infeasibility=phi)
        if res.status == 3:
            return SolveOutcome(status="unbounded", message=res.message)
        return SolveOutcome(status="error", message=res.message)

    # -- MILP -------------------------------------------------------------

    def _solve_milp(self, cm: CompiledModel, b_ub, b_eq) -> SolveOutcome:
        A = sp.vstack([cm.A_ub, cm.A_eq], format="csr")
        row_lb = np.concatenate([np.full(len(b_ub), -np.inf), b_eq])
        row_ub = np.concatenate([b_ub, b_eq])
        constraints = _ScipyLinear(A, row_lb, row_ub) if A.shape[0] else ()
        res = milp(
            cm.c,
            constraints=constraints,
            integrality=cm.integrality,
            bounds=Bounds(cm.lb, cm.ub),
            options={"mip_rel_gap": self.mip_rel_gap},
        )
        if res.status == 0:
            return self._optimal_outcome(cm, res.x, None, b_ub, b_eq)
        if res.status == 2:
            return SolveOutcome(status="infeasible", message=res.message)
        if res.status == 3:
            return SolveOutcome(status="unbounded", message=res.message)
        return SolveOutcome(status="error", message=res.message)

    # -- QP ---------------------------------------------------------------

    def _solve_qp(self, cm: CompiledModel, b_ub, b_eq) -> SolveOutcome:
        import cvxopt

        n = len(cm.var_names)
        P = np.zeros((n, n))
        for (i, j), q in cm.quad.items():
            P[i, j] += q
            P[j, i] += q
        # rows: declared <= block first, then finite bounds
        G_rows = [cm.A_ub.toarray()] if cm.A_ub.shape[0] else []
        h_parts = [b_ub] if cm.A_ub.shape[0] else []
        fin_ub = np.isfinite(cm.ub)
        fin_lb = np.isfinite(cm.lb) & (cm.lb != 0.0)
        lb_zero = cm.lb == 0.0
        eye = np.eye(n)
        if fin_ub.any():
            G_rows.append(eye[fin_ub])
            h_parts.append(cm.ub[fin_ub])
        low = fin_lb | lb_zero
        if low.any():
            G_rows.append(-eye[low])
            h_parts.append(-cm.lb[low])
        G = np.vstack(G_rows) if G_rows else np.zeros((0, n))
        h = np.concatenate(h_parts) if h_parts else np.zeros(0)

        cvxopt.solvers.options.update({
            "show_progress": False,
            "abstol": 1e-9,
            "reltol": 1e-9,
            "feastol": 1e-8,
            "maxiters": 200,
        })
        kwargs = {}
        if cm.A_eq.shape[0]:
            kwargs["A"] = cvxopt.matrix(cm.A_eq.toarray())
            kwargs["b"] = cvxopt.matrix(b_eq)

        def attempt(**extra):
            try:
                sol = cvxopt.solvers.qp(
                    cvxopt.matrix(P), cvxopt.matrix(cm.c),
                    cvxopt.matrix(G), cvxopt.matrix(h), **kwargs, **extra,
                )
            except (ValueError, ArithmeticError) as exc:
                return {"status": f"exception: {exc}"}
            if sol["status"] == "unknown" and sol.get("x") is not None:
                # stalled short of the requested tolerance; keep the
                # iterate when its residuals are tight enough to trust
                pinf = sol.get("primal infeasibility")
                rgap = sol.get("relative gap")
                agap = sol.get("gap")
                gap_ok = ((rgap is not None and rgap < 1e-6)
                          or (agap is not None and agap < 1e-8))
                if pinf is not None and pinf < 1e-6 and gap_ok:
                    sol["status"] = "optimal"
            return sol

        sol = attempt()
        if sol["status"] != "optimal":
            # the default KKT solver can stall on degenerate actives;
            # LDL factors through the singularity
            retry = attempt(kktsolver="ldl")
            if retry["status"] == "optimal":
                sol = retry
        if sol["status"] == "optimal":
            x = np.asarray(sol["x"]).ravel()
            duals = self._qp_duals_via_lp(cm, P, x, b_ub, b_eq)
            if duals is None:
                # fall back to the interior-point multipliers
                z = np.asarray(sol["z"]).ravel()
                duals = {}
                n_ub = cm.A_ub.shape[0]
                y_ub = z[:n_ub].copy()
                y_ub[cm.ub_flipped] = -y_ub[cm.ub_flipped]
                for tag, val in zip(cm.ub_tags, y_ub):
                    duals[tag] = float(val)
                if cm.A_eq.shape[0]:
                    y_eq = np.asarray(sol["y"]).ravel()
                    for tag, val in zip(cm.eq_tags, y_eq):
                        duals[tag] = float(val)
            return self._optimal_outcome(cm, x, duals, b_ub, b_eq)
        # cvxopt reports infeasibility loosely ("unknown" on hard cases), so
        # let the elastic probe on the linear part decide
        try:
            ray, phi = self._farkas(cm, b_ub, b_eq)
        except BackendError:
            return SolveOutcome(status="error",
                                message=f"cvxopt status {sol['status']}")
        return SolveOutcome(status="infeasible", farkas_ray=ray, infeasibility=phi)

    def _qp_duals_via_lp(self, cm, P, x, b_ub, b_eq):
        """Recover multipliers by re-solving with the objective linearized
        at the quadratic optimum.

        Interior-point multipliers land in the middle of the optimal dual
        face, which is unbounded when a row and a variable bound pin the
        same activity (every zero-capacity evaluation does exactly that).
        The simplex dual is a vertex of the same face and matches the
        one-sided derivative of the optimal value, which is what the slope
        updates need.
        """
        grad = P @ x + cm.c
        res = linprog(
            grad,
            A_ub=cm.A_ub if cm.A_ub.shape[0] else None,
            b_ub=b_ub if cm.A_ub.shape[0] else None,
            A_eq=cm.A_eq if cm.A_eq.shape[0] else None,
            b_eq=b_eq if cm.A_eq.shape[0] else None,
            bounds=np.column_stack([cm.lb, cm.ub]),
            method="highs",
        )
        if res.status != 0:
            return None
        duals = {}
        if cm.A_ub.shape[0]:
            marg = np.asarray(res.ineqlin.marginals)
            y = -marg
            y[cm.ub_flipped] = marg[cm.ub_flipped]
            for tag, val in zip(cm.ub_tags, y):
                duals[tag] = float(val)
        if cm.A_eq.shape[0]:
            for tag, val in zip(cm.eq_tags, -np.asarray(res.eqlin.marginals)):
                duals[tag] = float(val)
        return duals

    # -- shared -----------------------------------------------------------

    def _objective_at(self, cm: CompiledModel, x: np.ndarray) -> float:
        val = float(cm.c @ x) + cm.obj_const
        for (i, j), q in cm.quad.items():
            val += q * x[i] * x[j]
        return val

    def _optimal_outcome(self, cm, x, duals, b_ub, b_eq) -> SolveOutcome:
        x = np.asarray(x, dtype=float)
        tol = self.feasibility_tol
        viol = 0.0
        if cm.A_ub.shape[0]:
            viol = max(viol, float(np.max(cm.A_ub @ x - b_ub, initial=0.0)))
        if cm.A_eq.shape[0]:
            viol = max(viol, float(np.max(np.abs(cm.A_eq @ x - b_eq), initial=0.0)))
        viol = max(viol, float(np.max(cm.lb - x, initial=0.0)))
        viol = max(viol, float(np.max(x - cm.ub, initial=0.0)))
        if viol > tol:
            return SolveOutcome(
                status="error",
                message=f"solver returned infeasible point, violation {viol:.3e}",
            )
        return SolveOutcome(
            status="optimal",
            primal={name: float(v) for name, v in zip(cm.var_names, x)},
            objective_value=self._objective_at(cm, x),
            duals=duals,
        )

    def _farkas(self, cm: CompiledModel, b_ub, b_eq) -> tuple[dict[str, float], float]:
        """Elastic phase-I: min sum of row slacks, bounds kept hard.

        The duals of the elastic LP aggregate the rows into a certificate:
        with w = A_ub' y_ub + A_eq' y_eq, any feasible x satisfies
        w @ x <= y @ b, while min over the variable box exceeds it.
        """
        n = len(cm.var_names)
        n_ub, n_eq = cm.A_ub.shape[0], cm.A_eq.shape[0]
        A_ub_el = sp.hstack(
            [cm.A_ub, -sp.identity(n_ub), sp.csr_matrix((n_ub, 2 * n_eq))],
            format="csr",
        ) if n_ub else None
        A_eq_el = sp.hstack(
            [cm.A_eq, sp.csr_matrix((n_eq, n_ub)),
             sp.identity(n_eq), -sp.identity(n_eq)],
            format="csr",
        ) if n_eq else None
        n_el = n_ub + 2 * n_eq
        c_el = np.concatenate([np.zeros(n), np.ones(n_el)])
        bounds = np.column_stack([
            np.concatenate([cm.lb, np.zeros(n_el)]),
            np.concatenate([cm.ub, np.full(n_el, np.inf)]),
        ])
        res = linprog(
            c_el,
            A_ub=A_ub_el,
            b_ub=b_ub if n_ub else None,
            A_eq=A_eq_el,
            b_eq=b_eq if n_eq else None,
            bounds=bounds,
            method="highs",
        )
        if res.status != 0:
            raise BackendError(f"elastic phase-I failed: {res.message}")
        phi = float(res.fun)
        if phi <= 1e-9:
            raise BackendError(
                "model reported infeasible but elastic relaxation is tight"
            )
        y_ub = -np.asarray(res.ineqlin.marginals) if n_ub else np.zeros(0)
        y_eq = -np.asarray(res.eqlin.marginals) if n_eq else np.zeros(0)
        w = np.zeros(n)
        if n_ub:
            w += cm.A_ub.T @ y_ub
        if n_eq:
            w += cm.A_eq.T @ y_eq
        # certificate: min over the box must stay strictly above y @ b
        w[np.abs(w) < 1e-9] = 0.0
        box_min = np.zeros(n)
        pos, neg = w > 0, w < 0
        box_min[pos] = w[pos] * cm.lb[pos]
        box_min[neg] = w[neg] * cm.ub[neg]
        gap = float(np.sum(box_min)) - (float(y_ub @ b_ub) + float(y_eq @ b_eq))
        if not np.isfinite(gap) or gap <= 1e-9:
            raise BackendError(f"Farkas certificate check failed (gap {gap:.3e})")
        ray = {tag: float(v) for tag, v in zip(cm.ub_tags, y_ub)}
        ray.update({tag: float(v) for tag, v in zip(cm.eq_tags, y_eq)})
        return ray, phi


def write_lp(model: ModelSpec, path: str) -> None:
    """Dump a ModelSpec as LP-format text. Debug aid, not bit-exact."""

    def term(coef: float, name: str) -> str:
        sign = "+" if coef >= 0 else "-"
        return f" {sign} {abs(coef):.12g} {name}"

    lines = ["Minimize", " obj:"]
    expr = "".join(term(c, v) for v, c in model.objective.items())
    if model.objective_quad:
        q = "".join(
            term(2.0 * c, f"{u} * {v}" if u != v else f"{u} ^ 2")
            for (u, v), c in model.objective_quad.items()
        )
        expr += f" + [{q} ] / 2"
    lines.append(expr if expr else " 0 zero_pad")
    lines.append("Subject To")
    op = {"<=": "<=", "=": "=", ">=": ">="}
    for con in model.constraints:
        body = "".join(term(c, v) for v, c in con.coeffs.items())
        lines.append(f" {con.tag}:{body} {op[con.sense]} {con.rhs:.12g}")
    lines.append("Bounds")
    for v in model.variables:
        lo = "-inf" if not np.isfinite(v.lb) else f"{v.lb:.12g}"
        hi = "+inf" if not np.isfinite(v.ub) else f"{v.ub:.12g}"
        lines.append(f" {lo} <= {v.name} <= {hi}")
    gen = [v.name for v in model.variables if v.kind == "integer"]
    binv = [v.name for v in model.variables if v.kind == "binary"]
    if gen:
        lines.append("Generals")
        lines.append(" " + " ".join(gen))
    if binv:
        lines.append("Binaries")
        lines.append(" " + " ".join(binv))
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
