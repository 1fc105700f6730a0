"""Standard-form MILP container, incremental builder, and native JSON format."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

SENSES = ("L", "E", "G")  # <=, =, >=
_SENSE_ALIASES = {"<=": "L", "<": "L", "L": "L", "=": "E", "==": "E", "E": "E", ">=": "G", ">": "G", "G": "G"}

FORMAT_VERSION = 1


class InstanceError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


def _as_sense(s) -> str:
    try:
        return _SENSE_ALIASES[str(s)]
    except KeyError:
        raise InstanceError(f"unknown row sense {s!r}") from None


@dataclass
class MilpInstance:
    """min obj.x + obj_offset  s.t.  A x (sense) rhs,  lb <= x <= ub,  x_j integer for j in int_set."""

    obj: np.ndarray
    A: sp.csr_matrix
    rhs: np.ndarray
    sense: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    int_set: np.ndarray
    var_names: list[str] | None = None
    row_names: list[str] | None = None
    annotations: dict = field(default_factory=dict)
    obj_offset: float = 0.0

    def __post_init__(self):
        self.obj = np.asarray(self.obj, dtype=float).reshape(-1)
        n = self.obj.shape[0]
        A = sp.csr_matrix(self.A, dtype=float)
        if A.shape[1] != n:
            if A.shape == (0, 0) or A.nnz == 0 and A.shape[0] == 0:
                A = sp.csr_matrix((0, n))
            else:
                raise InstanceError(f"matrix has {A.shape[1]} columns, objective has {n}")
        A.sum_duplicates()
        A.eliminate_zeros()
        A.sort_indices()
        self.A = A
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        self.sense = np.array([_as_sense(s) for s in self.sense], dtype="<U1")
        self.lb = np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.asarray(self.ub, dtype=float).reshape(-1)
        self.int_set = np.unique(np.asarray(self.int_set, dtype=np.int64).reshape(-1))
        self.validate()

    @property
    def n(self) -> int:
        return self.obj.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def is_integer(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[self.int_set] = True
        return mask

    @property
    def is_binary(self) -> np.ndarray:
        return self.is_integer & (self.lb >= 0) & (self.ub <= 1)

    def validate(self) -> None:
        n, m = self.n, self.m
        for name, arr, size in (("rhs", self.rhs, m), ("sense", self.sense, m),
                                ("lb", self.lb, n), ("ub", self.ub, n)):
            if arr.shape[0] != size:
                raise InstanceError(f"{name} has length {arr.shape[0]}, expected {size}")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise InstanceError("NaN bound")
        if not np.all(np.isfinite(self.obj)) or not np.all(np.isfinite(self.rhs)):
            raise InstanceError("objective and rhs must be finite")
        if not np.all(np.isfinite(self.A.data)):
            raise InstanceError("matrix must be finite")
        if self.int_set.size and (self.int_set[0] < 0 or self.int_set[-1] >= n):
            raise InstanceError("integer index out of range")
        if self.var_names is not None and len(self.var_names) != n:
            raise InstanceError("var_names length mismatch")
        if self.row_names is not None and len(self.row_names) != m:
            raise InstanceError("row_names length mismatch")

    def bounds_consistent(self) -> bool:
        return bool(np.all(self.lb <= self.ub))

    def counts(self) -> dict:
        """Binary / general-integer / continuous variable counts and row count."""
        isint = self.is_integer
        isbin = self.is_binary
        return {
            "binary": int(isbin.sum()),
            "integer": int((isint & ~isbin).sum()),
            "continuous": int((~isint).sum()),
            "constraints": self.m,
            "nonzeros": int(self.A.nnz),
        }

    def objective_value(self, x) -> float:
        return float(self.obj @ np.asarray(x, dtype=float)) + self.obj_offset

    def max_violation(self, x, integrality: bool = True) -> float:
        """Largest absolute violation of rows, bounds and (optionally) integrality."""
        x = np.asarray(x, dtype=float)
        act = self.A @ x if self.m else np.zeros(0)
        viol = 0.0
        if self.m:
            le = self.sense == "L"
            ge = self.sense == "G"
            eq = self.sense == "E"
            viol = max(viol,
                       float(np.max(act[le] - self.rhs[le], initial=0.0)),
                       float(np.max(self.rhs[ge] - act[ge], initial=0.0)),
                       float(np.max(np.abs(act[eq] - self.rhs[eq]), initial=0.0)))
        viol = max(viol, float(np.max(self.lb - x, initial=0.0)), float(np.max(x - self.ub, initial=0.0)))
        if integrality and self.int_set.size:
            xi = x[self.int_set]
            viol = max(viol, float(np.max(np.abs(xi - np.round(xi)))))
        return viol

    def is_feasible(self, x, tol: float = 1e-6) -> bool:
        return self.max_violation(x) <= tol

    def copy(self) -> "MilpInstance":
        return MilpInstance(self.obj.copy(), self.A.copy(), self.rhs.copy(), self.sense.copy(),
                            self.lb.copy(), self.ub.copy(), self.int_set.copy(),
                            None if self.var_names is None else list(self.var_names),
                            None if self.row_names is None else list(self.row_names),
                            json.loads(json.dumps(self.annotations)), self.obj_offset)

    def permuted(self, var_perm=None, row_perm=None) -> "MilpInstance":
        """Instance with variables/rows reordered: new column k is old column var_perm[k]."""
        n, m = self.n, self.m
        vp = np.arange(n) if var_perm is None else np.asarray(var_perm)
        rp = np.arange(m) if row_perm is None else np.asarray(row_perm)
        inv = np.empty(n, dtype=np.int64)
        inv[vp] = np.arange(n)
        return MilpInstance(self.obj[vp], self.A[rp][:, vp], self.rhs[rp], self.sense[rp],
                            self.lb[vp], self.ub[vp], inv[self.int_set],
                            None if self.var_names is None else [self.var_names[i] for i in vp],
                            None if self.row_names is None else [self.row_names[i] for i in rp],
                            {}, self.obj_offset)

    def equals(self, other: "MilpInstance", tol: float = 0.0) -> bool:
        if (self.n, self.m) != (other.n, other.m):
            return False
        for a, b in ((self.obj, other.obj), (self.rhs, other.rhs), (self.lb, other.lb), (self.ub, other.ub)):
            with np.errstate(invalid="ignore"):
                if not np.all((a == b) | (np.abs(a - b) <= tol)):
                    return False
        if not (np.array_equal(self.sense, other.sense) and np.array_equal(self.int_set, other.int_set)):
            return False
        diff = (self.A - other.A).tocoo()
        if diff.nnz and np.max(np.abs(diff.data)) > tol:
            return False
        return abs(self.obj_offset - other.obj_offset) <= tol


class ModelBuilder:
    """Accumulates variables and sparse rows, then freezes into a MilpInstance."""

    def __init__(self):
        self.obj: list[float] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.integer: list[int] = []
        self.var_names: list[str] = []
        self.var_tags: list[dict] = []
        self.rows_i: list[int] = []
        self.rows_j: list[int] = []
        self.rows_v: list[float] = []
        self.rhs: list[float] = []
        self.sense: list[str] = []
        self.row_names: list[str] = []
        self.row_tags: list[dict] = []

    @property
    def n(self) -> int:
        return len(self.obj)

    @property
    def m(self) -> int:
        return len(self.rhs)

    def add_var(self, lb=0.0, ub=math.inf, obj=0.0, integer=False, name=None, **tags) -> int:
        j = len(self.obj)
        self.obj.append(float(obj))
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        if integer:
            self.integer.append(j)
        self.var_names.append(name or f"x{j}")
        self.var_tags.append(tags)
        return j

    def add_binary(self, name=None, **tags) -> int:
        return self.add_var(0.0, 1.0, 0.0, True, name, **tags)

    def add_row(self, coeffs: dict[int, float] | list[tuple[int, float]], sense: str, rhs: float,
                name=None, **tags) -> int:
        i = len(self.rhs)
        items = coeffs.items() if isinstance(coeffs, dict) else coeffs
        for j, v in items:
            if v != 0.0:
                self.rows_i.append(i)
                self.rows_j.append(int(j))
                self.rows_v.append(float(v))
        self.rhs.append(float(rhs))
        self.sense.append(_as_sense(sense))
        self.row_names.append(name or f"r{i}")
        self.row_tags.append(tags)
        return i

    def build(self, extra_annotations: dict | None = None) -> MilpInstance:
        n, m = self.n, self.m
        A = sp.coo_matrix((self.rows_v, (self.rows_i, self.rows_j)), shape=(m, n)).tocsr()
        ann = {"vars": self.var_tags, "rows": self.row_tags}
        if extra_annotations:
            ann.update(extra_annotations)
        return MilpInstance(np.array(self.obj), A, np.array(self.rhs), np.array(self.sense, dtype="<U1"),
                            np.array(self.lb), np.array(self.ub), np.array(self.integer, dtype=np.int64),
                            list(self.var_names), list(self.row_names), ann)


# -- native JSON format ------------------------------------------------------

def _bound_out(v: float):
    return None if math.isinf(v) else float(v)


def to_json_dict(inst: MilpInstance) -> dict:
    A = inst.A.tocsr()
    rows = []
    for i in range(inst.m):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        rows.append({"idx": A.indices[lo:hi].tolist(), "val": A.data[lo:hi].tolist()})
    d = {
        "format_version": FORMAT_VERSION,
        "n": inst.n,
        "m": inst.m,
        "obj": inst.obj.tolist(),
        "obj_offset": inst.obj_offset,
        "rows": rows,
        "rhs": inst.rhs.tolist(),
        "sense": inst.sense.tolist(),
        "lb": [_bound_out(v) for v in inst.lb],
        "ub": [_bound_out(v) for v in inst.ub],
        "int_set": inst.int_set.tolist(),
        "annotations": inst.annotations,
    }
    if inst.var_names is not None:
        d["var_names"] = inst.var_names
    if inst.row_names is not None:
        d["row_names"] = inst.row_names
    return d


def from_json_dict(d: dict) -> MilpInstance:
    try:
        n, m = int(d["n"]), int(d["m"])
        ii, jj, vv = [], [], []
        for i, row in enumerate(d["rows"]):
            if len(row["idx"]) != len(row["val"]):
                raise InstanceError(f"row {i}: idx/val length mismatch")
            ii.extend([i] * len(row["idx"]))
            jj.extend(row["idx"])
            vv.extend(row["val"])
        if len(d["rows"]) != m:
            raise InstanceError(f"expected {m} rows, found {len(d['rows'])}")
        A = sp.coo_matrix((vv, (ii, jj)), shape=(m, n)).tocsr()
        lb = [-math.inf if v is None else float(v) for v in d["lb"]]
        ub = [math.inf if v is None else float(v) for v in d["ub"]]
        return MilpInstance(np.array(d["obj"], dtype=float), A, np.array(d["rhs"], dtype=float),
                            np.array(d["sense"], dtype="<U1"), np.array(lb), np.array(ub),
                            np.array(d.get("int_set", []), dtype=np.int64), d.get("var_names"),
                            d.get("row_names"), d.get("annotations", {}), float(d.get("obj_offset", 0.0)))
    except (KeyError, TypeError, IndexError) as exc:
        raise InstanceError(f"malformed instance JSON: {exc!r}") from exc


def save_json(inst: MilpInstance, path) -> None:
    Path(path).write_text(json.dumps(to_json_dict(inst), separators=(",", ":")))


def load_json(path) -> MilpInstance:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from exc
    return from_json_dict(d)
