"""Featured bipartite graph of a MILP (variables x constraints) from root-LP statistics."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .milp.instance import MilpInstance
from .milp.simplex import AT_LB, AT_UB, BASIC, LpSolution, NumericalError, lp_relax_solve

SCHEMA_VERSION = 1
VAR_FEATURES = (
    "is_binary", "is_general_integer", "is_continuous", "obj_coef", "has_lb", "has_ub",
    "lb", "ub", "lp_value", "fractionality", "reduced_cost", "at_lower", "at_upper", "basic", "col_nnz",
)
CON_FEATURES = ("rhs", "sense", "dual", "tight")
EDGE_FEATURES = ("coef",)
N_VAR_FEATURES = len(VAR_FEATURES)  # 15
N_CON_FEATURES = len(CON_FEATURES)  # 4


class SchemaError(ValueError):
    pass


@dataclass
class BipartiteGraph:
    V: np.ndarray          # (n, 15)
    C: np.ndarray          # (m, 4)
    edges: np.ndarray      # (|E|, 2) rows of (variable index, constraint index)
    E: np.ndarray          # (|E|, 1)
    int_vars: np.ndarray   # indices of integer variables
    lp_ok: bool = True     # False: LP-derived features were zero-filled
    schema_version: int = SCHEMA_VERSION

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    def with_membership(self, members) -> np.ndarray:
        """V with one extra 0/1 column marking the candidate backdoor set."""
        col = np.zeros((self.n, 1))
        col[np.asarray(list(members), dtype=np.int64), 0] = 1.0
        return np.hstack([self.V, col])

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "V": self.V.tolist(), "C": self.C.tolist(),
                "edges": self.edges.tolist(), "E": self.E.tolist(), "int_vars": self.int_vars.tolist(),
                "lp_ok": self.lp_ok}

    @classmethod
    def from_dict(cls, d: dict) -> "BipartiteGraph":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"graph schema {d.get('schema_version')} != {SCHEMA_VERSION}")
        V = np.array(d["V"], dtype=float).reshape(-1, N_VAR_FEATURES)
        C = np.array(d["C"], dtype=float).reshape(-1, N_CON_FEATURES)
        edges = np.array(d["edges"], dtype=np.int64).reshape(-1, 2)
        E = np.array(d["E"], dtype=float).reshape(-1, 1)
        return cls(V, C, edges, E, np.array(d["int_vars"], dtype=np.int64), bool(d["lp_ok"]))

    def save(self, path) -> None:
        p = Path(path)
        if p.suffix == ".npz":
            np.savez(p, V=self.V, C=self.C, edges=self.edges, E=self.E, int_vars=self.int_vars,
                     lp_ok=np.array(self.lp_ok), schema_version=np.array(self.schema_version))
        else:
            p.write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "BipartiteGraph":
        p = Path(path)
        if p.suffix == ".npz":
            z = np.load(p)
            if int(z["schema_version"]) != SCHEMA_VERSION:
                raise SchemaError(f"graph schema {int(z['schema_version'])} != {SCHEMA_VERSION}")
            return cls(z["V"], z["C"], z["edges"], z["E"], z["int_vars"], bool(z["lp_ok"]))
        return cls.from_dict(json.loads(p.read_text()))


def _maxabs(a) -> float:
    a = np.asarray(a, dtype=float)
    a = a[np.isfinite(a)]
    return float(np.max(np.abs(a))) if a.size else 0.0


def _safe_div(a, s):
    return np.zeros_like(a, dtype=float) if s == 0.0 else a / s


def to_bipartite(instance: MilpInstance, root_lp: LpSolution | None = None) -> BipartiteGraph:
    if root_lp is None:
        try:
            root_lp = lp_relax_solve(instance)
        except NumericalError:
            root_lp = None
    n, m = instance.n, instance.m
    isint = instance.is_integer
    isbin = instance.is_binary
    lb, ub = instance.lb, instance.ub
    flb, fub = np.isfinite(lb), np.isfinite(ub)
    bscale = _maxabs(np.concatenate([lb, ub]))
    A = instance.A.tocsc()
    col_nnz = np.diff(A.indptr).astype(float)

    V = np.zeros((n, N_VAR_FEATURES))
    V[:, 0] = isbin
    V[:, 1] = isint & ~isbin
    V[:, 2] = ~isint
    V[:, 3] = _safe_div(instance.obj, _maxabs(instance.obj))
    V[:, 4] = flb
    V[:, 5] = fub
    V[:, 6] = np.where(flb, _safe_div(np.where(flb, lb, 0.0), bscale), 0.0)
    V[:, 7] = np.where(fub, _safe_div(np.where(fub, ub, 0.0), bscale), 0.0)
    V[:, 14] = _safe_div(col_nnz, col_nnz.max(initial=0.0))

    C = np.zeros((m, N_CON_FEATURES))
    C[:, 0] = _safe_div(instance.rhs, _maxabs(instance.rhs))
    C[:, 1] = np.where(instance.sense == "G", -1.0, np.where(instance.sense == "E", 0.0, 1.0))

    lp_ok = root_lp is not None and root_lp.status == "optimal"
    if lp_ok:
        x = root_lp.values
        span = ub - lb
        boxed = flb & fub & (span > 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            scaled = np.where(boxed, (x - lb) / np.where(boxed, span, 1.0), 0.0)
        xs = _maxabs(x[~boxed]) if np.any(~boxed) else 0.0
        scaled = np.where(boxed, scaled, _safe_div(x, xs) if xs else 0.0)
        fixed = flb & fub & (span <= 0)
        scaled = np.where(fixed, 0.0, scaled)
        V[:, 8] = np.clip(scaled, -1.0, 1.0)
        frac = np.abs(x - np.round(x))
        V[:, 9] = np.where(isint, frac, 0.0)
        V[:, 10] = _safe_div(root_lp.reduced_costs, _maxabs(root_lp.reduced_costs))
        codes = root_lp.basis_codes
        V[:, 11] = codes == AT_LB
        V[:, 12] = codes == AT_UB
        V[:, 13] = codes == BASIC
        C[:, 2] = _safe_div(root_lp.duals, _maxabs(root_lp.duals))
        act = instance.A @ x if m else np.zeros(0)
        C[:, 3] = np.abs(act - instance.rhs) <= 1e-6 * (1.0 + np.abs(instance.rhs))

    coo = instance.A.tocoo()
    order = np.lexsort((coo.row, coo.col))
    rows, cols, vals = coo.row[order], coo.col[order], coo.data[order]
    rowmax = np.zeros(m)
    if vals.size:
        np.maximum.at(rowmax, rows, np.abs(vals))
    E = (vals / np.where(rowmax[rows] > 0, rowmax[rows], 1.0)).reshape(-1, 1)
    edges = np.stack([cols, rows], axis=1).astype(np.int64).reshape(-1, 2)
    return BipartiteGraph(V, C, edges, E, instance.int_set.copy(), lp_ok)
