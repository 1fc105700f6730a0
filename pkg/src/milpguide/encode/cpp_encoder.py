"""Sampled chance-constrained planning: K disturbance samples, a shared control
sequence, per-sample STL indicators and one quantile cardinality row."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import stl
from ..milp.instance import MilpInstance, ModelBuilder
from .stl_encoder import (EncodingContext, EncodingError, FormulaEmitter, LinearDynamics, _unvec, _vec,
                          add_controls, add_dynamics, add_trajectory)

NOISE_COV = 0.01


class QuantileError(EncodingError):
    pass


class DisturbedDynamics(LinearDynamics):
    """x_{t+1} = A x_t + B u_t + w_t."""


def box_muller(rng: np.random.Generator, size: int) -> np.ndarray:
    """Standard normals from pairs of uniforms (Box-Muller transform)."""
    half = (size + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1], keeps log finite
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
    return z[:size]


@dataclass
class SampleSet:
    w: np.ndarray                 # (K, T+1, n_x)
    seed: int
    cov_scale: float = NOISE_COV

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.ndim != 3:
            raise EncodingError("samples must be a (K, T+1, n_x) array")

    @property
    def K(self) -> int:
        return self.w.shape[0]

    @classmethod
    def draw(cls, K: int, T: int, n_x: int, seed: int, cov_scale: float = NOISE_COV) -> "SampleSet":
        rng = np.random.default_rng(seed)
        z = box_muller(rng, K * (T + 1) * n_x).reshape(K, T + 1, n_x)
        return cls(math.sqrt(cov_scale) * z, seed, cov_scale)

    def meta(self) -> dict:
        return {"seed": self.seed, "K": self.K, "mean": 0.0, "cov_scale": self.cov_scale,
                "generator": "numpy PCG64 + Box-Muller"}


def quantile_count(K: int, delta: float) -> int:
    """q = ceil((K+1)(1-delta)); error if q > K."""
    if K < 1:
        raise QuantileError("K must be at least 1")
    if not 0 < delta < 1:
        raise QuantileError("delta must lie in (0, 1)")
    # guard against 0.1 * 10 style rounding pushing the ceiling up by one
    q = math.ceil((K + 1) * (1 - delta) - 1e-9)
    if q > K:
        raise QuantileError(f"quantile index {q} exceeds sample count {K} (delta={delta})")
    return q


@dataclass
class CppProblem:
    dynamics: DisturbedDynamics
    x0: np.ndarray
    T: int
    spec: stl.Formula
    delta: float
    samples: SampleSet
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

    @property
    def K(self) -> int:
        return self.samples.K

    def validate(self):
        n_x = self.dynamics.n_x
        if not 0 < self.delta < 1:
            raise EncodingError("delta must lie in (0, 1)")
        quantile_count(self.K, self.delta)
        if self.samples.w.shape[1:] != (self.T + 1, n_x):
            raise EncodingError(f"samples have shape {self.samples.w.shape[1:]}, expected {(self.T + 1, n_x)}")
        if stl.horizon(self.spec) > self.T:
            raise EncodingError(f"spec horizon {stl.horizon(self.spec)} exceeds T={self.T}")
        if self.x0.shape[0] != n_x:
            raise EncodingError("x0 must have length n_x")

    @property
    def q(self) -> int:
        return quantile_count(self.K, self.delta)


def encode_cpp(problem: CppProblem, ctx: EncodingContext | None = None) -> MilpInstance:
    ctx = ctx or EncodingContext()
    ctx.registry.clear()
    dyn = problem.dynamics
    b = ModelBuilder()
    uvars = add_controls(b, dyn.n_u, problem.T, problem.input_lb, problem.input_ub)
    phi = stl.to_nnf(problem.spec)
    xs, roots = [], []
    for i in range(problem.K):
        # state bounds as explicit per-sample rows; presolve folds them back into bounds
        xv = add_trajectory(b, dyn.n_x, problem.T, problem.state_lb, problem.state_ub, as_rows=True, sample=i)
        add_dynamics(b, dyn, xv, uvars, problem.x0, W=problem.samples.w[i], sample=i)
        em = FormulaEmitter(b, xv, problem.state_lb, problem.state_ub, ctx, scope=i, tags={"sample": i})
        z = em.formula(phi, 0)
        b.var_tags[z] = {**b.var_tags[z], "root": True}
        xs.append(xv)
        roots.append(z)
    q = problem.q
    coeffs: dict[int, float] = {}
    for z in roots:
        coeffs[z] = coeffs.get(z, 0.0) + 1.0
    b.add_row(coeffs, "G", float(q), role="quantile", t=0)
    return b.build({"layout": {"x": xs, "u": uvars, "roots": roots, "q": q, "kind": "cpp"}})


def resimulate(problem: CppProblem, U, W=None) -> np.ndarray:
    """(K, T+1, n_x) trajectories for controls U under the stored (or given) disturbances."""
    W = problem.samples.w if W is None else W
    return np.stack([problem.dynamics.simulate(problem.x0, U, w) for w in W])


def sample_robustness(problem: CppProblem, U, W=None) -> np.ndarray:
    return np.array([stl.robustness(problem.spec, X, 0) for X in resimulate(problem, U, W)])


def empirical_satisfaction(problem: CppProblem, U, n: int = 500, seed: int = 12345) -> float:
    fresh = SampleSet.draw(n, problem.T, problem.dynamics.n_x, seed, problem.samples.cov_scale)
    rho = sample_robustness(problem, U, fresh.w)
    return float(np.mean(rho >= 0.0))


def cpp_to_dict(p: CppProblem, embed_samples: bool = False) -> dict:
    spec = stl.formula_to_json(p.spec)
    d = {
        "kind": "cpp",
        "dynamics": p.dynamics.to_dict(),
        "x0": p.x0.tolist(),
        "T": p.T,
        "delta": p.delta,
        "samples": p.samples.meta(),
        "bounds": {"state_lb": _vec(p.state_lb), "state_ub": _vec(p.state_ub),
                   "input_lb": _vec(p.input_lb), "input_ub": _vec(p.input_ub)},
        "spec": spec["formula"],
        "predicates": spec["predicates"],
        "objective": p.objective,
        "meta": p.meta,
    }
    if embed_samples:
        d["samples"]["w"] = p.samples.w.tolist()
    return d


def cpp_from_dict(d: dict) -> CppProblem:
    try:
        spec = stl.formula_from_json({"formula": d["spec"], "predicates": d.get("predicates", {})})
        dyn = DisturbedDynamics(d["dynamics"]["A"], d["dynamics"]["B"])
        sm = d["samples"]
        T = int(d["T"])
        if "w" in sm:
            samples = SampleSet(np.array(sm["w"]), int(sm["seed"]), float(sm.get("cov_scale", NOISE_COV)))
        else:
            samples = SampleSet.draw(int(sm["K"]), T, dyn.n_x, int(sm["seed"]), float(sm.get("cov_scale", NOISE_COV)))
        bd = d["bounds"]
        return CppProblem(dyn, np.array(d["x0"], dtype=float), T, spec, float(d["delta"]), samples,
                          _unvec(bd["state_lb"], -math.inf), _unvec(bd["state_ub"], math.inf),
                          _unvec(bd["input_lb"], -math.inf), _unvec(bd["input_ub"], math.inf),
                          d.get("objective", "l1_effort"), d.get("meta", {}))
    except KeyError as exc:
        raise EncodingError(f"problem file missing field {exc}") from exc
