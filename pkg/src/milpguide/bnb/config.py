"""Solver configuration space (15 categorical parameters), limits and priorities."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

# (name, options); the first option listed is not necessarily the default
PARAMETERS: tuple[tuple[str, tuple], ...] = (
    ("branching_rule", ("most_fractional", "pseudocost", "random")),
    ("branching_direction", ("down_first", "up_first", "auto")),
    ("node_selection", ("best_bound", "depth_first", "hybrid")),
    ("plunge_depth", (4, 16)),
    ("rounding_frequency", ("off", "every_10", "every_node")),
    ("diving", ("off", "root_only", "periodic")),
    ("diving_depth", (10, 50)),
    ("presolve", ("off", "basic")),
    ("lp_pricing", ("dantzig", "bland")),
    ("warm_start", ("off", "on")),
    ("tie_break", ("index", "reverse_index")),
    ("priority_decay", ("off", "on")),
    ("incumbent_cut", ("off", "on")),
    ("reprocess", ("off", "on")),
    ("seed", (0, 1)),
)
OPTIONS = dict(PARAMETERS)
PARAM_NAMES = tuple(name for name, _ in PARAMETERS)
ONE_HOT_DIM = sum(len(opts) for _, opts in PARAMETERS)  # 35


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    branching_rule: str = "most_fractional"
    branching_direction: str = "auto"
    node_selection: str = "hybrid"
    plunge_depth: int = 4
    rounding_frequency: str = "every_10"
    diving: str = "root_only"
    diving_depth: int = 50
    presolve: str = "basic"
    lp_pricing: str = "dantzig"
    warm_start: str = "on"
    tie_break: str = "index"
    priority_decay: str = "off"
    incumbent_cut: str = "on"
    reprocess: str = "off"
    seed: int = 0

    def __post_init__(self):
        for name, opts in PARAMETERS:
            if getattr(self, name) not in opts:
                raise ConfigError(f"{name}={getattr(self, name)!r} not in {opts}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        unknown = set(d) - set(PARAM_NAMES)
        if unknown:
            raise ConfigError(f"unknown parameters {sorted(unknown)}")
        return cls(**d)

    def one_hot(self) -> np.ndarray:
        return encode_config(self)


def encode_config(cfg: SolverConfig) -> np.ndarray:
    out = np.zeros(ONE_HOT_DIM)
    k = 0
    for name, opts in PARAMETERS:
        out[k + opts.index(getattr(cfg, name))] = 1.0
        k += len(opts)
    return out


def decode_config(vec) -> SolverConfig:
    """Per-parameter argmax over each one-hot block (ties -> first option)."""
    vec = np.asarray(vec, dtype=float).reshape(-1)
    if vec.shape[0] != ONE_HOT_DIM:
        raise ConfigError(f"expected vector of length {ONE_HOT_DIM}, got {vec.shape[0]}")
    vals = {}
    k = 0
    for name, opts in PARAMETERS:
        vals[name] = opts[int(np.argmax(vec[k:k + len(opts)]))]
        k += len(opts)
    return SolverConfig(**vals)


def block_slices() -> list[slice]:
    out, k = [], 0
    for _, opts in PARAMETERS:
        out.append(slice(k, k + len(opts)))
        k += len(opts)
    return out


def random_config(rng: np.random.Generator) -> SolverConfig:
    return SolverConfig(**{name: opts[int(rng.integers(len(opts)))] for name, opts in PARAMETERS})


def config_space_size() -> int:
    return math.prod(len(opts) for _, opts in PARAMETERS)


@dataclass
class Limits:
    time_limit: float = math.inf
    node_limit: int | None = None
    gap: float = 1e-6

    def __post_init__(self):
        if not self.time_limit > 0:
            raise ConfigError("time limit must be positive")
        if self.node_limit is not None and self.node_limit <= 0:
            raise ConfigError("node limit must be positive")
        if not self.gap > 0:
            raise ConfigError("gap tolerance must be positive")

    def to_dict(self) -> dict:
        return {"time_limit": self.time_limit if math.isfinite(self.time_limit) else None,
                "node_limit": self.node_limit, "gap": self.gap}

    @classmethod
    def from_dict(cls, d: dict) -> "Limits":
        t = d.get("time_limit")
        return cls(math.inf if t is None else float(t), d.get("node_limit"), float(d.get("gap", 1e-6)))


@dataclass
class BranchPriority:
    """Variable index -> integer priority; higher branches earlier, default 0."""

    values: dict[int, int] = field(default_factory=dict)

    def array(self, n: int) -> np.ndarray:
        p = np.zeros(n, dtype=np.int64)
        for j, v in self.values.items():
            if 0 <= j < n:
                p[j] = int(v)
        return p

    @classmethod
    def from_set(cls, indices, priority: int = 1) -> "BranchPriority":
        return cls({int(j): priority for j in indices})
