"""Seeded random generators for the multi-target STL and reach-avoid CPP benchmarks."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import stl
from .encode.cpp_encoder import CppProblem, DisturbedDynamics, SampleSet, cpp_to_dict
from .encode.stl_encoder import PlanningProblem, double_integrator, dumps_problem, problem_to_dict

MAX_ATTEMPTS = 10_000
POS = (0, 1)          # state layout: (px, py, vx, vy)
N_X = 4


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class StlBenchParams:
    num_obstacles: int
    num_groups: int
    targets_per_group: int
    T: int
    workspace: tuple[float, float] = (0.0, 10.0)
    size_range: tuple[float, float] = (0.8, 2.0)
    v_max: float = 2.0
    a_max: float = 1.0
    seed: int = 0

    def validate(self):
        if self.num_obstacles < 0 or self.num_groups < 1 or self.targets_per_group < 1:
            raise GenerationError("need num_obstacles >= 0 and at least one group and one target per group")
        if self.T < 1:
            raise GenerationError("T must be at least 1")
        lo, hi = self.workspace
        if not hi - lo > self.size_range[1] or not 0 < self.size_range[0] <= self.size_range[1]:
            raise GenerationError("rectangle sizes must fit into the workspace")


@dataclass(frozen=True)
class CppBenchParams:
    K: int
    T: int
    delta: float = 0.2
    seed: int = 0
    jitter: float = 0.5
    v_max: float = 3.0
    a_max: float = 1.5

    def validate(self):
        if self.K < 1:
            raise GenerationError("K must be at least 1")
        if self.T < 15:
            raise GenerationError("T must be at least 15 (the obstacle clause spans [0, 15])")
        if not 0 < self.delta < 1:
            raise GenerationError("delta must lie in (0, 1)")


def _rect(rng, ws, size_range):
    w, h = rng.uniform(size_range[0], size_range[1], 2)
    x = rng.uniform(ws[0], ws[1] - w)
    y = rng.uniform(ws[0], ws[1] - h)
    return (float(x), float(y)), (float(x + w), float(y + h))


def _inside(inner, outer) -> bool:
    (a0, a1), (b0, b1) = inner
    (c0, c1), (d0, d1) = outer
    return a0 >= c0 and a1 >= c1 and b0 <= d0 and b1 <= d1


def _point_in(p, rect) -> bool:
    (c0, c1), (d0, d1) = rect
    return c0 <= p[0] <= d0 and c1 <= p[1] <= d1


def gen_stl_multi_target(params: StlBenchParams) -> PlanningProblem:
    """phi = AND_i (OR_j F_[0,T] target_ij) AND G_[0,T] (AND_k outside(obstacle_k)).

    The planning horizon is T + 1 so that the literal [0, T] intervals satisfy
    the strict well-formedness rule horizon(phi) < horizon.
    """
    params.validate()
    rng = np.random.default_rng(params.seed)
    ws = params.workspace
    attempts = 0
    obstacles = []
    for _ in range(params.num_obstacles):
        attempts += 1
        obstacles.append(_rect(rng, ws, params.size_range))
    targets = []
    for i in range(params.num_groups):
        group = []
        while len(group) < params.targets_per_group:
            attempts += 1
            if attempts > MAX_ATTEMPTS:
                raise GenerationError(f"target placement exceeded {MAX_ATTEMPTS} attempts")
            r = _rect(rng, ws, params.size_range)
            if any(_inside(r, o) for o in obstacles):
                continue
            group.append(r)
        targets.append(group)
    # start strip along the bottom edge, zero velocity, outside every obstacle
    while True:
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            raise GenerationError(f"start placement exceeded {MAX_ATTEMPTS} attempts")
        p0 = (float(rng.uniform(ws[0], ws[1])), float(rng.uniform(ws[0], ws[0] + 1.0)))
        if not any(_point_in(p0, o) for o in obstacles):
            break

    T = params.T
    reach = []
    for i, group in enumerate(targets):
        reach.append(stl.disj(*[stl.eventually(stl.box_inside(POS, N_X, lo, hi, f"T{i}_{j}"), 0, T)
                                for j, (lo, hi) in enumerate(group)]))
    clauses = list(reach)
    if obstacles:
        avoid = stl.conj(*[stl.box_outside(POS, N_X, lo, hi, f"O{k}") for k, (lo, hi) in enumerate(obstacles)])
        clauses.append(stl.always(avoid, 0, T))
    spec = stl.conj(*clauses)
    v, a = params.v_max, params.a_max
    meta = {"generator": "stl_multi_target", "params": asdict(params), "placement": "uniform",
            "obstacles": obstacles, "targets": targets}
    return PlanningProblem(double_integrator(1.0), np.array([p0[0], p0[1], 0.0, 0.0]), T + 1, spec,
                           [ws[0], ws[0], -v, -v], [ws[1], ws[1], v, v], [-a, -a], [a, a], "l1_effort",
                           json.loads(json.dumps(meta)))


# fixed reach-avoid layout (centre, half-size); positions are jittered per seed
CPP_START = (0.0, 0.0)
CPP_G1 = ((3.0, 3.0), 2.0)
CPP_G2 = ((8.0, 8.0), 2.5)
CPP_OBS = ((1.5, 8.5), 1.0)
CPP_BOX = (-20.0, 30.0)


def gen_cpp_reach_avoid(params: CppBenchParams) -> CppProblem:
    """phi = F_[2,6](G1 AND F_[3,7] G2) AND G_[0,15](NOT Obs) under additive Gaussian noise."""
    params.validate()
    rng = np.random.default_rng(params.seed)

    def region(spec):
        (cx, cy), h = spec
        cx += rng.uniform(-params.jitter, params.jitter)
        cy += rng.uniform(-params.jitter, params.jitter)
        return (float(cx - h), float(cy - h)), (float(cx + h), float(cy + h))

    g1, g2, obs = region(CPP_G1), region(CPP_G2), region(CPP_OBS)
    G1 = stl.box_inside(POS, N_X, *g1, name="G1")
    G2 = stl.box_inside(POS, N_X, *g2, name="G2")
    Obs = stl.box_inside(POS, N_X, *obs, name="Obs")
    spec = stl.conj(stl.eventually(stl.conj(G1, stl.eventually(G2, 3, 7)), 2, 6),
                    stl.always(stl.Not(Obs), 0, 15))
    samples = SampleSet.draw(params.K, params.T, N_X, params.seed + 1_000_003)
    dyn = double_integrator(1.0)
    v, a = params.v_max, params.a_max
    lo, hi = CPP_BOX
    meta = {"generator": "cpp_reach_avoid", "params": asdict(params), "regions": {"G1": g1, "G2": g2, "Obs": obs}}
    return CppProblem(DisturbedDynamics(dyn.A, dyn.B), np.array([*CPP_START, 0.0, 0.0]), params.T, spec,
                      params.delta, samples, [lo, lo, -v, -v], [hi, hi, v, v], [-a, -a], [a, a], "l1_effort",
                      json.loads(json.dumps(meta)))


def parse_param_string(text: str, seed: int = 0, delta: float | None = None):
    """``stl:N_o,N_c,N_t,T`` or ``cpp:K,T`` -> params object."""
    try:
        kind, rest = text.split(":", 1)
        nums = [int(v) for v in rest.split(",")]
    except ValueError:
        raise GenerationError(f"bad parameter string {text!r}; expected stl:N_o,N_c,N_t,T or cpp:K,T") from None
    kind = kind.strip().lower()
    if kind == "stl" and len(nums) == 4:
        return StlBenchParams(*nums, seed=seed)
    if kind == "cpp" and len(nums) == 2:
        return CppBenchParams(nums[0], nums[1], seed=seed, **({} if delta is None else {"delta": delta}))
    raise GenerationError(f"bad parameter string {text!r}; expected stl:N_o,N_c,N_t,T or cpp:K,T")


def generate(params):
    if isinstance(params, StlBenchParams):
        return gen_stl_multi_target(params)
    if isinstance(params, CppBenchParams):
        return gen_cpp_reach_avoid(params)
    raise TypeError(f"unknown params {params!r}")


def problem_dict(problem) -> dict:
    return cpp_to_dict(problem) if isinstance(problem, CppProblem) else problem_to_dict(problem)


def problem_bytes(problem) -> bytes:
    return dumps_problem(problem_dict(problem)).encode()


def manifest(params, problem) -> dict:
    return {
        "generator": "cpp_reach_avoid" if isinstance(params, CppBenchParams) else "stl_multi_target",
        "params": asdict(params),
        "seed": params.seed,
        "placement": "uniform",
        "sha256": hashlib.sha256(problem_bytes(problem)).hexdigest(),
    }
