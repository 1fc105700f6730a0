"""Big-M MILP encoding of DT-STL planning problems with linear dynamics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import stl
from ..milp.instance import MilpInstance, ModelBuilder


class EncodingError(ValueError):
    pass


@dataclass
class LinearDynamics:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        n_x = self.A.shape[0]
        if self.A.shape != (n_x, n_x) or self.B.shape[0] != n_x:
            raise EncodingError(f"inconsistent dynamics shapes A{self.A.shape} B{self.B.shape}")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    def simulate(self, x0, U, W=None) -> np.ndarray:
        """States x_0..x_T for controls U (T, n_u) and optional additive disturbances W."""
        U = np.asarray(U, dtype=float).reshape(-1, self.n_u)
        X = np.zeros((U.shape[0] + 1, self.n_x))
        X[0] = x0
        for t in range(U.shape[0]):
            X[t + 1] = self.A @ X[t] + self.B @ U[t]
            if W is not None:
                X[t + 1] += W[t]
        return X

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist()}


def double_integrator(dt: float = 1.0, dims: int = 2) -> LinearDynamics:
    """State (p_1..p_d, v_1..v_d), input accelerations."""
    I = np.eye(dims)
    Z = np.zeros((dims, dims))
    A = np.block([[I, dt * I], [Z, I]])
    B = np.vstack([0.5 * dt * dt * I, dt * I])
    return LinearDynamics(A, B)


@dataclass
class PlanningProblem:
    dynamics: LinearDynamics
    x0: np.ndarray
    T: int
    spec: stl.Formula
    state_lb: np.ndarray
    state_ub: np.ndarray
    input_lb: np.ndarray
    input_ub: np.ndarray
    objective: str = "l1_effort"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("x0", "state_lb", "state_ub", "input_lb", "input_ub"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        self.validate()

    def validate(self):
        d = self.dynamics
        if self.x0.shape[0] != d.n_x or self.state_lb.shape[0] != d.n_x or self.state_ub.shape[0] != d.n_x:
            raise EncodingError("state vectors must have length n_x")
        if self.input_lb.shape[0] != d.n_u or self.input_ub.shape[0] != d.n_u:
            raise EncodingError("input bounds must have length n_u")
        if self.T < 1:
            raise EncodingError("horizon T must be at least 1")
        if not stl.well_formed(self.spec, self.T):
            raise EncodingError(f"spec horizon {stl.horizon(self.spec)} not < T={self.T}")
        if np.any(self.x0 < self.state_lb - 1e-9) or np.any(self.x0 > self.state_ub + 1e-9):
            raise EncodingError("x0 outside the state bounds")
        if self.objective != "l1_effort":
            raise EncodingError(f"unknown objective {self.objective!r}")


@dataclass
class EncodingContext:
    """big_M None means per-predicate M = max |h| over the state box + 1 (+ rho_min)."""

    big_M: float | None = None
    rho_min: float = 0.0
    registry: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.big_M is not None and not self.big_M > 0:
            raise EncodingError("big_M must be positive")
        if self.rho_min < 0:
            raise EncodingError("rho_min must be nonnegative")


class FormulaEmitter:
    """Emits binaries and rows for one state trajectory.

    ``xvars[t][d]`` is the variable index of state component d at time t.
    ``tags`` are merged into every annotation (e.g. the sample index).
    """

    def __init__(self, builder: ModelBuilder, xvars, box_lo, box_hi, ctx: EncodingContext,
                 scope=None, tags: dict | None = None):
        self.b = builder
        self.xvars = xvars
        self.T = len(xvars) - 1
        self.box_lo = np.asarray(box_lo, dtype=float)
        self.box_hi = np.asarray(box_hi, dtype=float)
        self.ctx = ctx
        self.scope = scope
        self.tags = tags or {}
        self.sub_ids = ctx.registry.setdefault("__subformula_ids__", {})

    def _sub_id(self, phi) -> int:
        return self.sub_ids.setdefault(phi, len(self.sub_ids))

    def _binary(self, kind: str, phi, t: int) -> int:
        return self.b.add_binary(role="stl", kind=kind, t=t, subformula=self._sub_id(phi), **self.tags)

    def _row(self, coeffs, sense, rhs, kind, t):
        self.b.add_row(coeffs, sense, rhs, role="stl", kind=kind, t=t, **self.tags)

    def constant(self, value: bool) -> int:
        key = (self.scope, "const", value)
        if key not in self.ctx.registry:
            j = self.b.add_var(float(value), float(value), 0.0, True, role="stl", kind="const", t=0,
                               subformula=-1, **self.tags)
            self.ctx.registry[key] = j
        return self.ctx.registry[key]

    def big_m(self, h: stl.LinearPredicate) -> float:
        need = stl.max_abs_over_box(h, self.box_lo, self.box_hi) + self.ctx.rho_min
        if not math.isfinite(need):
            raise EncodingError("predicate is unbounded over the state box; finite state bounds are required")
        if self.ctx.big_M is not None:
            if self.ctx.big_M < need:
                raise EncodingError(f"big_M={self.ctx.big_M} too small for predicate "
                                    f"{h.name or h.coefficients} (needs >= {need:.6g})")
            return self.ctx.big_M
        return need + 1.0

    def predicate(self, h: stl.LinearPredicate, t: int, phi=None) -> int:
        """Two rows: h(x_t) + M(1-z) >= rho_min and h(x_t) - M z <= rho_min."""
        phi = phi if phi is not None else stl.Predicate(h)
        key = (self.scope, phi, t)
        if key in self.ctx.registry:
            return self.ctx.registry[key]
        if h.dim != len(self.xvars[t]):
            raise EncodingError(f"predicate dimension {h.dim} does not match state dimension {len(self.xvars[t])}")
        M = self.big_m(h)
        z = self._binary("predicate", phi, t)
        lin = {self.xvars[t][d]: c for d, c in enumerate(h.coefficients) if c != 0.0}
        r = self.ctx.rho_min
        self._row({**lin, z: -M}, "G", r + h.offset - M, "pred_lo", t)
        self._row({**lin, z: -M}, "L", r + h.offset, "pred_hi", t)
        self.ctx.registry[key] = z
        return z

    def formula(self, phi: stl.Formula, t: int = 0) -> int:
        if t + stl.horizon(phi) > self.T:
            raise stl.HorizonError(f"subformula needs steps up to {t + stl.horizon(phi)}, signal ends at {self.T}")
        return self._emit(phi, t)

    def _emit(self, phi, t: int) -> int:
        if isinstance(phi, stl.TrueF):
            return self.constant(True)
        if isinstance(phi, stl.FalseF):
            return self.constant(False)
        if isinstance(phi, stl.Predicate):
            return self.predicate(phi.pred, t, phi)
        if isinstance(phi, stl.Not):
            raise EncodingError("formula must be in negation normal form")
        key = (self.scope, phi, t)
        if key in self.ctx.registry:
            return self.ctx.registry[key]
        if isinstance(phi, stl.And):
            kids = [self._emit(c, t) for c in phi.children]
            z = self._binary("and", phi, t)
            for k in kids:
                self._row({z: 1.0, k: -1.0}, "L", 0.0, "and", t)
        elif isinstance(phi, stl.Or):
            kids = [self._emit(c, t) for c in phi.children]
            z = self._binary("or", phi, t)
            self._disjunction(z, kids, "or", t)
        elif isinstance(phi, stl.Always):
            kids = [self._emit(phi.child, s) for s in phi.interval.steps(t)]
            z = self._binary("always", phi, t)
            for k in dict.fromkeys(kids):
                self._row({z: 1.0, k: -1.0}, "L", 0.0, "always", t)
        elif isinstance(phi, stl.Eventually):
            kids = [self._emit(phi.child, s) for s in phi.interval.steps(t)]
            z = self._binary("eventually", phi, t)
            self._disjunction(z, kids, "eventually", t)
        elif isinstance(phi, stl.Until):
            left = [self._emit(phi.left, s) for s in range(t, t + phi.interval.hi + 1)]
            z = self._binary("until", phi, t)
            aux = []
            for s in phi.interval.steps(t):
                w = self.b.add_binary(role="stl", kind="until_witness", t=s, subformula=self._sub_id(phi),
                                      anchor=t, **self.tags)
                self._row({w: 1.0, self._emit(phi.right, s): -1.0}, "L", 0.0, "until_right", s)
                for k in dict.fromkeys(left[: s - t + 1]):
                    self._row({w: 1.0, k: -1.0}, "L", 0.0, "until_left", s)
                aux.append(w)
            self._disjunction(z, aux, "until", t)
        else:
            raise TypeError(f"not a formula: {phi!r}")
        self.ctx.registry[key] = z
        return z

    def _disjunction(self, z, kids, kind, t):
        coeffs = {z: 1.0}
        for k in kids:
            coeffs[k] = coeffs.get(k, 0.0) - 1.0
        self._row(coeffs, "L", 0.0, kind, t)


def encode_predicate(h: stl.LinearPredicate, t: int, ctx: EncodingContext, builder: ModelBuilder,
                     xvars, box_lo, box_hi) -> int:
    return FormulaEmitter(builder, xvars, box_lo, box_hi, ctx).predicate(h, t)


def encode_formula(phi_nnf: stl.Formula, t: int, ctx: EncodingContext, builder: ModelBuilder,
                   xvars, box_lo, box_hi) -> int:
    return FormulaEmitter(builder, xvars, box_lo, box_hi, ctx).formula(phi_nnf, t)


def add_trajectory(b: ModelBuilder, n_x: int, T: int, lb, ub, as_rows: bool = False, **tags):
    """State variables x_t for t = 0..T; bounds either as variable bounds or as explicit rows."""
    xvars = []
    for t in range(T + 1):
        row = []
        for d in range(n_x):
            if as_rows:
                j = b.add_var(-math.inf, math.inf, name=None, role="x", t=t, dim=d, **tags)
                if math.isfinite(lb[d]):
                    b.add_row({j: 1.0}, "G", lb[d], role="state_bound", t=t, dim=d, **tags)
                if math.isfinite(ub[d]):
                    b.add_row({j: 1.0}, "L", ub[d], role="state_bound", t=t, dim=d, **tags)
            else:
                j = b.add_var(lb[d], ub[d], role="x", t=t, dim=d, **tags)
            row.append(j)
        xvars.append(row)
    return xvars


def add_controls(b: ModelBuilder, n_u: int, T: int, lb, ub):
    """Controls u_t (t < T) with L1-effort epigraph variables s >= |u|."""
    uvars = []
    for t in range(T):
        row = []
        for k in range(n_u):
            u = b.add_var(lb[k], ub[k], role="u", t=t, dim=k)
            s = b.add_var(0.0, math.inf, obj=1.0, role="effort", t=t, dim=k)
            b.add_row({u: 1.0, s: -1.0}, "L", 0.0, role="effort", t=t, dim=k)
            b.add_row({u: -1.0, s: -1.0}, "L", 0.0, role="effort", t=t, dim=k)
            row.append(u)
        uvars.append(row)
    return uvars


def add_dynamics(b: ModelBuilder, dyn: LinearDynamics, xvars, uvars, x0, W=None, **tags):
    """x_0 = x0 and x_{t+1} - A x_t - B u_t = w_t."""
    for d in range(dyn.n_x):
        b.add_row({xvars[0][d]: 1.0}, "E", float(x0[d]), role="x0", t=0, dim=d, **tags)
    for t in range(len(uvars)):
        for d in range(dyn.n_x):
            coeffs = {xvars[t + 1][d]: 1.0}
            for e in range(dyn.n_x):
                if dyn.A[d, e] != 0.0:
                    coeffs[xvars[t][e]] = coeffs.get(xvars[t][e], 0.0) - dyn.A[d, e]
            for k in range(dyn.n_u):
                if dyn.B[d, k] != 0.0:
                    coeffs[uvars[t][k]] = -dyn.B[d, k]
            rhs = 0.0 if W is None else float(W[t][d])
            b.add_row(coeffs, "E", rhs, role="dynamics", t=t, dim=d, **tags)


def encode_problem(problem: PlanningProblem, ctx: EncodingContext | None = None) -> MilpInstance:
    ctx = ctx or EncodingContext()
    ctx.registry.clear()  # variable indices are only meaningful within one builder
    dyn = problem.dynamics
    b = ModelBuilder()
    xvars = add_trajectory(b, dyn.n_x, problem.T, problem.state_lb, problem.state_ub)
    uvars = add_controls(b, dyn.n_u, problem.T, problem.input_lb, problem.input_ub)
    add_dynamics(b, dyn, xvars, uvars, problem.x0)
    phi = stl.to_nnf(problem.spec)
    em = FormulaEmitter(b, xvars, problem.state_lb, problem.state_ub, ctx)
    root = em.formula(phi, 0)
    b.lb[root] = 1.0
    b.var_tags[root] = {**b.var_tags[root], "root": True}
    return b.build({"layout": {"x": xvars, "u": uvars, "root": root, "kind": "stl"}})


def trajectory_from_solution(instance: MilpInstance, x, sample: int | None = None) -> np.ndarray:
    lay = instance.annotations["layout"]
    xv = lay["x"] if sample is None else lay["x"][sample]
    return np.asarray(x, dtype=float)[np.asarray(xv)]


def controls_from_solution(instance: MilpInstance, x) -> np.ndarray:
    uv = instance.annotations["layout"]["u"]
    if not uv:
        return np.zeros((0, 0))
    return np.asarray(x, dtype=float)[np.asarray(uv)]


# -- problem files -----------------------------------------------------------

def _vec(v):
    return [None if not math.isfinite(a) else float(a) for a in v]


def _unvec(v, fill):
    return np.array([fill if a is None else float(a) for a in v])


def problem_to_dict(p: PlanningProblem) -> dict:
    spec = stl.formula_to_json(p.spec)
    return {
        "kind": "stl",
        "dynamics": p.dynamics.to_dict(),
        "x0": p.x0.tolist(),
        "T": p.T,
        "bounds": {"state_lb": _vec(p.state_lb), "state_ub": _vec(p.state_ub),
                   "input_lb": _vec(p.input_lb), "input_ub": _vec(p.input_ub)},
        "spec": spec["formula"],
        "predicates": spec["predicates"],
        "objective": p.objective,
        "meta": p.meta,
    }


def problem_from_dict(d: dict) -> PlanningProblem:
    try:
        spec = stl.formula_from_json({"formula": d["spec"], "predicates": d.get("predicates", {})})
        bd = d["bounds"]
        return PlanningProblem(
            LinearDynamics(d["dynamics"]["A"], d["dynamics"]["B"]), np.array(d["x0"], dtype=float), int(d["T"]),
            spec, _unvec(bd["state_lb"], -math.inf), _unvec(bd["state_ub"], math.inf),
            _unvec(bd["input_lb"], -math.inf), _unvec(bd["input_ub"], math.inf),
            d.get("objective", "l1_effort"), d.get("meta", {}))
    except KeyError as exc:
        raise EncodingError(f"problem file missing field {exc}") from exc


def dumps_problem(d: dict) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def save_problem(p: PlanningProblem, path) -> None:
    Path(path).write_text(dumps_problem(problem_to_dict(p)))
