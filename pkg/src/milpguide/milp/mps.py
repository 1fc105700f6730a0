"""MPS export/import and format-dispatching instance loader.

The writer lays fields out at the classical fixed-format columns
(2-3, 5-12, 15-22, 25-36, 40-47, 50-61). Names longer than 8 characters
or containing blanks cannot live in fixed format, so in that case all
names are replaced by generated ones (C0000001, R0000001). The reader
splits on whitespace, which accepts both fixed and free layouts as long
as names contain no blanks.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .instance import MilpInstance, ParseError, load_json

_SECTIONS = {"NAME", "OBJSENSE", "ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS", "ENDATA"}
_OBJ_ROW = "OBJ"


def _num(v: float) -> str:
    s = repr(float(v))
    if len(s) > 12:
        s = f"{v:.12g}"
        if len(s) > 12:
            s = f"{v:.6e}"
    return s


def _line(code: str, name: str, f3: str = "", f4: str = "", f5: str = "", f6: str = "") -> str:
    out = f" {code:<2} {name:<8}  {f3:<8}  {f4:>12}"
    if f5:
        out += f"   {f5:<8}  {f6:>12}"
    return out.rstrip()


def _fits(names) -> bool:
    return names is not None and all(0 < len(s) <= 8 and " " not in s for s in names) \
        and len(set(names)) == len(names)


def export_mps(inst: MilpInstance, path=None, name: str = "MILP") -> str:
    n, m = inst.n, inst.m
    cols = inst.var_names if _fits(inst.var_names) else [f"C{j + 1:07d}" for j in range(n)]
    rows = inst.row_names if _fits(inst.row_names) and _OBJ_ROW not in inst.row_names \
        else [f"R{i + 1:07d}" for i in range(m)]
    isint = inst.is_integer
    AC = inst.A.tocsc()
    out = [f"NAME          {name}", "ROWS", f" N  {_OBJ_ROW}"]
    out += [f" {s}  {r}" for s, r in zip(inst.sense, rows)]
    out.append("COLUMNS")
    in_int = False
    marker = 0
    for j in range(n):
        if isint[j] != in_int:
            tag = "'INTORG'" if isint[j] else "'INTEND'"
            out.append(f"    MARKER{marker:04d}  'MARKER'                 {tag}")
            marker += 1
            in_int = bool(isint[j])
        entries = []
        if inst.obj[j] != 0.0:
            entries.append((_OBJ_ROW, inst.obj[j]))
        lo, hi = AC.indptr[j], AC.indptr[j + 1]
        entries += [(rows[i], v) for i, v in zip(AC.indices[lo:hi], AC.data[lo:hi])]
        if not entries:
            # keep the column declared even when it appears nowhere
            entries.append((_OBJ_ROW, 0.0))
        for k in range(0, len(entries), 2):
            pair = entries[k:k + 2]
            f5, f6 = (pair[1][0], _num(pair[1][1])) if len(pair) == 2 else ("", "")
            out.append(_line("", cols[j], pair[0][0], _num(pair[0][1]), f5, f6))
    if in_int:
        out.append(f"    MARKER{marker:04d}  'MARKER'                 'INTEND'")
    out.append("RHS")
    if inst.obj_offset != 0.0:
        # objective-row RHS holds minus the constant term
        out.append(_line("", "RHS", _OBJ_ROW, _num(-inst.obj_offset)))
    for i in range(m):
        if inst.rhs[i] != 0.0:
            out.append(_line("", "RHS", rows[i], _num(inst.rhs[i])))
    out.append("BOUNDS")
    for j in range(n):
        lo, hi = inst.lb[j], inst.ub[j]
        c = cols[j]
        if lo == hi:
            out.append(_line("FX", "BND", c, _num(lo)))
            continue
        if isint[j] and lo == 0.0 and hi == 1.0:
            out.append(_line("BV", "BND", c, "1"))
            continue
        if math.isinf(lo) and math.isinf(hi):
            out.append(_line("FR", "BND", c))
            continue
        if math.isinf(lo):
            out.append(_line("MI", "BND", c))
        elif lo != 0.0:
            out.append(_line("LO", "BND", c, _num(lo)))
        if math.isinf(hi):
            out.append(_line("PL", "BND", c))
        else:
            out.append(_line("UP", "BND", c, _num(hi)))
    out.append("ENDATA")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _float(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"bad number {tok!r}", lineno) from None


def parse_mps(text: str) -> MilpInstance:
    section = None
    obj_row = None
    maximize = False
    row_index: dict[str, int] = {}
    row_names: list[str] = []
    senses: list[str] = []
    col_index: dict[str, int] = {}
    col_names: list[str] = []
    obj: list[float] = []
    integer: list[bool] = []
    ii: list[int] = []
    jj: list[int] = []
    vv: list[float] = []
    rhs: dict[int, float] = {}
    offset = 0.0
    bounds: dict[int, list] = {}
    in_int = False
    seen_end = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.startswith("*"):
            continue
        if not raw[0].isspace():
            tok = raw.split()
            key = tok[0].upper()
            if key not in _SECTIONS:
                raise ParseError(f"unknown section {tok[0]!r}", lineno)
            if key == "RANGES":
                raise ParseError("RANGES section is not supported", lineno)
            if key == "OBJSENSE" and len(tok) > 1:
                maximize = tok[1].upper() in ("MAX", "MAXIMIZE")
            section = key
            if key == "ENDATA":
                seen_end = True
                break
            continue
        tok = raw.split()
        if section == "OBJSENSE":
            maximize = tok[0].upper() in ("MAX", "MAXIMIZE")
        elif section == "ROWS":
            if len(tok) != 2:
                raise ParseError("ROWS entry needs a type and a name", lineno)
            t, r = tok[0].upper(), tok[1]
            if t == "N":
                if obj_row is None:
                    obj_row = r
                continue
            if t not in ("L", "G", "E"):
                raise ParseError(f"unknown row type {tok[0]!r}", lineno)
            if r in row_index:
                raise ParseError(f"duplicate row {r!r}", lineno)
            row_index[r] = len(row_names)
            row_names.append(r)
            senses.append(t)
        elif section == "COLUMNS":
            if len(tok) >= 3 and tok[1].strip("'").upper() == "MARKER":
                flag = tok[2].strip("'").upper()
                if flag == "INTORG":
                    in_int = True
                elif flag == "INTEND":
                    in_int = False
                else:
                    raise ParseError(f"unknown marker {tok[2]!r}", lineno)
                continue
            if len(tok) not in (3, 5):
                raise ParseError("COLUMNS entry needs 3 or 5 fields", lineno)
            c = tok[0]
            if c not in col_index:
                col_index[c] = len(col_names)
                col_names.append(c)
                obj.append(0.0)
                integer.append(in_int)
            j = col_index[c]
            for r, v in zip(tok[1::2], tok[2::2]):
                val = _float(v, lineno)
                if r == obj_row:
                    obj[j] += val
                elif r in row_index:
                    ii.append(row_index[r])
                    jj.append(j)
                    vv.append(val)
                else:
                    raise ParseError(f"unknown row {r!r}", lineno)
        elif section == "RHS":
            pairs = tok[1:] if len(tok) % 2 == 1 else tok
            if len(pairs) not in (2, 4):
                raise ParseError("RHS entry needs 2 or 4 fields after the set name", lineno)
            for r, v in zip(pairs[0::2], pairs[1::2]):
                val = _float(v, lineno)
                if r == obj_row:
                    offset = -val
                elif r in row_index:
                    rhs[row_index[r]] = val
                else:
                    raise ParseError(f"unknown row {r!r}", lineno)
        elif section == "BOUNDS":
            if len(tok) < 3:
                raise ParseError("BOUNDS entry too short", lineno)
            t = tok[0].upper()
            c = tok[2]
            if c not in col_index:
                raise ParseError(f"unknown column {c!r}", lineno)
            j = col_index[c]
            b = bounds.setdefault(j, [0.0, math.inf])
            needs_val = t in ("UP", "LO", "FX", "LI", "UI")
            if needs_val and len(tok) < 4:
                raise ParseError(f"{t} bound needs a value", lineno)
            val = _float(tok[3], lineno) if needs_val else None
            if t in ("UP", "UI"):
                if val < 0 and b[0] == 0.0:
                    b[0] = -math.inf
                b[1] = val
            elif t in ("LO", "LI"):
                b[0] = val
            elif t == "FX":
                b[0] = b[1] = val
            elif t == "FR":
                b[0], b[1] = -math.inf, math.inf
            elif t == "MI":
                b[0] = -math.inf
            elif t == "PL":
                b[1] = math.inf
            elif t == "BV":
                b[0], b[1] = 0.0, 1.0
                integer[j] = True
            else:
                raise ParseError(f"unknown bound type {tok[0]!r}", lineno)
            if t in ("LI", "UI"):
                integer[j] = True
        else:
            raise ParseError("data line outside of any section", lineno)
    if not seen_end:
        raise ParseError("missing ENDATA", None)

    n, m = len(col_names), len(row_names)
    lb = np.zeros(n)
    ub = np.full(n, math.inf)
    for j, (lo, hi) in bounds.items():
        lb[j], ub[j] = lo, hi
    c = np.array(obj, dtype=float)
    if maximize:
        c, offset = -c, -offset
    b = np.zeros(m)
    for i, v in rhs.items():
        b[i] = v
    A = sp.coo_matrix((vv, (ii, jj)), shape=(m, n)).tocsr()
    return MilpInstance(c, A, b, np.array(senses, dtype="<U1"), lb, ub,
                        np.flatnonzero(np.array(integer, dtype=bool)), col_names, row_names, {}, offset)


def import_instance(path) -> MilpInstance:
    p = Path(path)
    if p.suffix.lower() == ".json":
        return load_json(p)
    if p.suffix.lower() == ".mps":
        return parse_mps(p.read_text())
    raise ParseError(f"unknown instance format {p.suffix!r} (expected .json or .mps)")
