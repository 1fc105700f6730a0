"""Discrete-time STL: formula trees, horizon, negation normal form, semantics.

Formulas are immutable, hashable trees so they can be used directly as
registry keys by the MILP encoders. Time intervals are integer steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np


class HorizonError(ValueError):
    """Raised when a formula is evaluated past the end of the signal."""


class FormulaSyntaxError(ValueError):
    pass


@dataclass(frozen=True)
class LinearPredicate:
    """``coefficients . x_t - offset >= 0``."""

    coefficients: tuple[float, ...]
    offset: float = 0.0
    name: str | None = None

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs or all(c == 0.0 for c in coeffs):
            raise ValueError("predicate needs at least one nonzero coefficient")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self) -> int:
        return len(self.coefficients)

    def value(self, state) -> float:
        return float(np.dot(self.coefficients, state)) - self.offset

    def negated(self) -> "LinearPredicate":
        name = None
        if self.name is not None:
            name = self.name[1:] if self.name.startswith("~") else "~" + self.name
        return LinearPredicate(tuple(-c for c in self.coefficients), -self.offset, name)


@dataclass(frozen=True)
class TimeInterval:
    lo: int
    hi: int

    def __post_init__(self):
        if int(self.lo) != self.lo or int(self.hi) != self.hi:
            raise ValueError("interval bounds must be integer steps")
        if self.lo < 0 or self.hi < self.lo:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")
        object.__setattr__(self, "lo", int(self.lo))
        object.__setattr__(self, "hi", int(self.hi))

    def steps(self, t: int = 0) -> range:
        return range(t + self.lo, t + self.hi + 1)


@dataclass(frozen=True)
class TrueF:
    pass


@dataclass(frozen=True)
class FalseF:
    """Only produced by negating ``TrueF`` during NNF conversion."""


@dataclass(frozen=True)
class Predicate:
    pred: LinearPredicate


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    children: tuple["Formula", ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("And needs at least two children")


@dataclass(frozen=True)
class Or:
    children: tuple["Formula", ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("Or needs at least two children")


@dataclass(frozen=True)
class Until:
    left: "Formula"
    right: "Formula"
    interval: TimeInterval


@dataclass(frozen=True)
class Eventually:
    child: "Formula"
    interval: TimeInterval


@dataclass(frozen=True)
class Always:
    child: "Formula"
    interval: TimeInterval


Formula = Union[TrueF, FalseF, Predicate, Not, And, Or, Until, Eventually, Always]


# -- convenience constructors ------------------------------------------------

def pred(coefficients: Sequence[float], offset: float = 0.0, name: str | None = None) -> Predicate:
    return Predicate(LinearPredicate(tuple(coefficients), offset, name))


def conj(*children: Formula) -> Formula:
    if len(children) == 1:
        return children[0]
    return And(tuple(children))


def disj(*children: Formula) -> Formula:
    if len(children) == 1:
        return children[0]
    return Or(tuple(children))


def eventually(child: Formula, lo: int, hi: int) -> Eventually:
    return Eventually(child, TimeInterval(lo, hi))


def always(child: Formula, lo: int, hi: int) -> Always:
    return Always(child, TimeInterval(lo, hi))


def until(left: Formula, right: Formula, lo: int, hi: int) -> Until:
    return Until(left, right, TimeInterval(lo, hi))


def box_inside(dims: tuple[int, int], n_x: int, lo: Sequence[float], hi: Sequence[float],
               name: str | None = None) -> Formula:
    """Axis-aligned rectangle membership as a conjunction of 4 half-planes."""
    preds = []
    for k, (d, a, b) in enumerate(zip(dims, lo, hi)):
        e = [0.0] * n_x
        e[d] = 1.0
        preds.append(pred(e, a, None if name is None else f"{name}_lo{k}"))
        preds.append(pred([-v for v in e], -b, None if name is None else f"{name}_hi{k}"))
    return conj(*preds)


def box_outside(dims: tuple[int, int], n_x: int, lo: Sequence[float], hi: Sequence[float],
                name: str | None = None) -> Formula:
    """Complement of a rectangle as a disjunction of 4 half-planes."""
    preds = []
    for k, (d, a, b) in enumerate(zip(dims, lo, hi)):
        e = [0.0] * n_x
        e[d] = 1.0
        preds.append(pred([-v for v in e], -a, None if name is None else f"{name}_left{k}"))
        preds.append(pred(e, b, None if name is None else f"{name}_right{k}"))
    return disj(*preds)


# -- structure ---------------------------------------------------------------

def horizon(phi: Formula) -> int:
    if isinstance(phi, (TrueF, FalseF, Predicate)):
        return 0
    if isinstance(phi, Not):
        return horizon(phi.child)
    if isinstance(phi, (And, Or)):
        return max(horizon(c) for c in phi.children)
    if isinstance(phi, Until):
        return phi.interval.hi + max(horizon(phi.left), horizon(phi.right))
    if isinstance(phi, (Eventually, Always)):
        return phi.interval.hi + horizon(phi.child)
    raise TypeError(f"not a formula: {phi!r}")


def well_formed(phi: Formula, T: int) -> bool:
    if T < 0:
        raise ValueError("T must be nonnegative")
    return horizon(phi) < T


def children(phi: Formula) -> tuple[Formula, ...]:
    if isinstance(phi, (And, Or)):
        return phi.children
    if isinstance(phi, Until):
        return (phi.left, phi.right)
    if isinstance(phi, (Not, Eventually, Always)):
        return (phi.child,)
    return ()


def has_negation(phi: Formula) -> bool:
    return isinstance(phi, Not) or any(has_negation(c) for c in children(phi))


def predicates(phi: Formula) -> list[LinearPredicate]:
    """Distinct predicates in first-occurrence order."""
    out: dict[LinearPredicate, None] = {}

    def walk(f):
        if isinstance(f, Predicate):
            out.setdefault(f.pred, None)
        for c in children(f):
            walk(c)

    walk(phi)
    return list(out)


def size(phi: Formula) -> int:
    return 1 + sum(size(c) for c in children(phi))


def to_nnf(phi: Formula) -> Formula:
    """Push negations down to predicates.

    A negated predicate ``not (h >= 0)`` becomes ``-h >= 0``; the two agree
    everywhere except on the boundary ``h = 0``. A negated until is unrolled
    into the equivalent discrete-time conjunction so the result only uses
    operators the encoder understands.
    """
    return _nnf(phi, False)


def _nnf(phi: Formula, neg: bool) -> Formula:
    if isinstance(phi, Not):
        return _nnf(phi.child, not neg)
    if isinstance(phi, TrueF):
        return FalseF() if neg else phi
    if isinstance(phi, FalseF):
        return TrueF() if neg else phi
    if isinstance(phi, Predicate):
        return Predicate(phi.pred.negated()) if neg else phi
    if isinstance(phi, And):
        kids = tuple(_nnf(c, neg) for c in phi.children)
        return Or(kids) if neg else And(kids)
    if isinstance(phi, Or):
        kids = tuple(_nnf(c, neg) for c in phi.children)
        return And(kids) if neg else Or(kids)
    if isinstance(phi, Eventually):
        kid = _nnf(phi.child, neg)
        return Always(kid, phi.interval) if neg else Eventually(kid, phi.interval)
    if isinstance(phi, Always):
        kid = _nnf(phi.child, neg)
        return Eventually(kid, phi.interval) if neg else Always(kid, phi.interval)
    if isinstance(phi, Until):
        if not neg:
            return Until(_nnf(phi.left, False), _nnf(phi.right, False), phi.interval)
        # not (a U_[lo,hi] b) at t  ==  for every k in [lo,hi]:
        #   b fails at t+k, or a fails somewhere in [t, t+k]
        nl = _nnf(phi.left, True)
        nr = _nnf(phi.right, True)
        parts = [Or((Always(nr, TimeInterval(k, k)), Eventually(nl, TimeInterval(0, k))))
                 for k in range(phi.interval.lo, phi.interval.hi + 1)]
        return conj(*parts)
    raise TypeError(f"not a formula: {phi!r}")


# -- semantics ---------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.states, dtype=float)
        if arr.ndim != 2:
            raise ValueError("trajectory must be a (T+1, n_x) array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("trajectory contains non-finite entries")
        object.__setattr__(self, "states", arr)

    @property
    def T(self) -> int:
        return self.states.shape[0] - 1


def _as_states(x) -> np.ndarray:
    if isinstance(x, Trajectory):
        return x.states
    return Trajectory(x).states


def _check(phi, states, t):
    T = states.shape[0] - 1
    if t < 0 or t + horizon(phi) > T:
        raise HorizonError(f"evaluating at t={t} needs {t + horizon(phi)} <= T={T}")


def robustness(phi: Formula, x, t: int = 0) -> float:
    """Min/max quantitative semantics; positive implies satisfaction."""
    states = _as_states(x)
    _check(phi, states, t)
    return _rho(phi, states, t, {})


def _rho(phi, X, t, memo) -> float:
    key = (phi, t)
    if key in memo:
        return memo[key]
    if isinstance(phi, TrueF):
        v = math.inf
    elif isinstance(phi, FalseF):
        v = -math.inf
    elif isinstance(phi, Predicate):
        v = phi.pred.value(X[t])
    elif isinstance(phi, Not):
        v = -_rho(phi.child, X, t, memo)
    elif isinstance(phi, And):
        v = min(_rho(c, X, t, memo) for c in phi.children)
    elif isinstance(phi, Or):
        v = max(_rho(c, X, t, memo) for c in phi.children)
    elif isinstance(phi, Always):
        v = min(_rho(phi.child, X, s, memo) for s in phi.interval.steps(t))
    elif isinstance(phi, Eventually):
        v = max(_rho(phi.child, X, s, memo) for s in phi.interval.steps(t))
    elif isinstance(phi, Until):
        best = -math.inf
        for s in phi.interval.steps(t):
            # left must hold on [t, s] inclusive, matching the encoder
            left = min(_rho(phi.left, X, r, memo) for r in range(t, s + 1))
            best = max(best, min(_rho(phi.right, X, s, memo), left))
        v = best
    else:
        raise TypeError(f"not a formula: {phi!r}")
    memo[key] = v
    return v


def satisfies(phi: Formula, x, t: int = 0) -> bool:
    """Boolean semantics with closed predicates (``h = 0`` satisfies)."""
    states = _as_states(x)
    _check(phi, states, t)
    return _sat(phi, states, t, {})


def _sat(phi, X, t, memo) -> bool:
    key = (phi, t)
    if key in memo:
        return memo[key]
    if isinstance(phi, TrueF):
        v = True
    elif isinstance(phi, FalseF):
        v = False
    elif isinstance(phi, Predicate):
        v = phi.pred.value(X[t]) >= 0.0
    elif isinstance(phi, Not):
        v = not _sat(phi.child, X, t, memo)
    elif isinstance(phi, And):
        v = all(_sat(c, X, t, memo) for c in phi.children)
    elif isinstance(phi, Or):
        v = any(_sat(c, X, t, memo) for c in phi.children)
    elif isinstance(phi, Always):
        v = all(_sat(phi.child, X, s, memo) for s in phi.interval.steps(t))
    elif isinstance(phi, Eventually):
        v = any(_sat(phi.child, X, s, memo) for s in phi.interval.steps(t))
    elif isinstance(phi, Until):
        v = any(_sat(phi.right, X, s, memo)
                and all(_sat(phi.left, X, r, memo) for r in range(t, s + 1))
                for s in phi.interval.steps(t))
    else:
        raise TypeError(f"not a formula: {phi!r}")
    memo[key] = v
    return v


# -- s-expression text format -----------------------------------------------

def _fmt_num(v: float) -> str:
    return repr(float(v)) if v != int(v) or abs(v) >= 1e15 else str(int(v))


def to_sexpr(phi: Formula) -> str:
    """Render a formula; named predicates print as their name."""
    if isinstance(phi, TrueF):
        return "true"
    if isinstance(phi, FalseF):
        return "false"
    if isinstance(phi, Predicate):
        p = phi.pred
        if p.name is not None:
            return p.name
        return "(ge (" + " ".join(_fmt_num(c) for c in p.coefficients) + ") " + _fmt_num(p.offset) + ")"
    if isinstance(phi, Not):
        return f"(not {to_sexpr(phi.child)})"
    if isinstance(phi, (And, Or)):
        op = "and" if isinstance(phi, And) else "or"
        return f"({op} " + " ".join(to_sexpr(c) for c in phi.children) + ")"
    if isinstance(phi, Eventually):
        return f"(F {phi.interval.lo} {phi.interval.hi} {to_sexpr(phi.child)})"
    if isinstance(phi, Always):
        return f"(G {phi.interval.lo} {phi.interval.hi} {to_sexpr(phi.child)})"
    if isinstance(phi, Until):
        return f"(U {phi.interval.lo} {phi.interval.hi} {to_sexpr(phi.left)} {to_sexpr(phi.right)})"
    raise TypeError(f"not a formula: {phi!r}")


def bindings_of(phi: Formula) -> dict[str, LinearPredicate]:
    """Name -> predicate table for every named predicate in ``phi``."""
    out: dict[str, LinearPredicate] = {}
    for p in predicates(phi):
        if p.name is None:
            continue
        if p.name in out and out[p.name] != p:
            raise ValueError(f"predicate name {p.name!r} bound to two different predicates")
        out[p.name] = p
    return out


def _tokenize(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def parse_sexpr(text: str, bindings: Mapping[str, LinearPredicate] | None = None) -> Formula:
    """Parse the s-expression format produced by :func:`to_sexpr`.

    Bare names are looked up in ``bindings``; ``~name`` resolves to the
    negation of ``name`` when only the positive form is bound.
    """
    bindings = dict(bindings or {})
    tokens = _tokenize(text)
    if not tokens:
        raise FormulaSyntaxError("empty formula")
    pos = 0

    def expect(tok):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != tok:
            got = tokens[pos] if pos < len(tokens) else "<end>"
            raise FormulaSyntaxError(f"expected {tok!r} at token {pos}, got {got!r}")
        pos += 1

    def integer():
        nonlocal pos
        if pos >= len(tokens):
            raise FormulaSyntaxError("unexpected end of input")
        tok = tokens[pos]
        pos += 1
        try:
            return int(tok)
        except ValueError:
            raise FormulaSyntaxError(f"expected integer at token {pos - 1}, got {tok!r}") from None

    def number():
        nonlocal pos
        if pos >= len(tokens):
            raise FormulaSyntaxError("unexpected end of input")
        tok = tokens[pos]
        pos += 1
        try:
            return float(tok)
        except ValueError:
            raise FormulaSyntaxError(f"expected number at token {pos - 1}, got {tok!r}") from None

    def atom(name):
        if name == "true":
            return TrueF()
        if name == "false":
            return FalseF()
        if name in bindings:
            p = bindings[name]
            if p.name != name:
                p = LinearPredicate(p.coefficients, p.offset, name)
            return Predicate(p)
        if name.startswith("~") and name[1:] in bindings:
            return Predicate(atom(name[1:]).pred.negated())
        raise FormulaSyntaxError(f"unbound predicate name {name!r}")

    def node():
        nonlocal pos
        if pos >= len(tokens):
            raise FormulaSyntaxError("unexpected end of input")
        tok = tokens[pos]
        if tok == ")":
            raise FormulaSyntaxError(f"unexpected ')' at token {pos}")
        if tok != "(":
            pos += 1
            return atom(tok)
        pos += 1
        if pos >= len(tokens):
            raise FormulaSyntaxError("unexpected end of input")
        op = tokens[pos]
        pos += 1
        if op == "not":
            f = Not(node())
        elif op in ("and", "or"):
            kids = []
            while pos < len(tokens) and tokens[pos] != ")":
                kids.append(node())
            f = (And if op == "and" else Or)(tuple(kids))
        elif op in ("F", "G"):
            lo, hi = integer(), integer()
            f = (Eventually if op == "F" else Always)(node(), TimeInterval(lo, hi))
        elif op == "U":
            lo, hi = integer(), integer()
            left = node()
            f = Until(left, node(), TimeInterval(lo, hi))
        elif op == "ge":
            expect("(")
            coeffs = []
            while pos < len(tokens) and tokens[pos] != ")":
                coeffs.append(number())
            expect(")")
            f = Predicate(LinearPredicate(tuple(coeffs), number()))
        else:
            raise FormulaSyntaxError(f"unknown operator {op!r}")
        expect(")")
        return f

    try:
        out = node()
    except ValueError as exc:
        if isinstance(exc, FormulaSyntaxError):
            raise
        raise FormulaSyntaxError(str(exc)) from exc
    if pos != len(tokens):
        raise FormulaSyntaxError(f"trailing tokens starting at {pos}")
    return out


def predicate_to_dict(p: LinearPredicate) -> dict:
    return {"coefficients": list(p.coefficients), "offset": p.offset}


def predicate_from_dict(name: str, d: Mapping) -> LinearPredicate:
    return LinearPredicate(tuple(d["coefficients"]), d.get("offset", 0.0), name)


def formula_to_json(phi: Formula) -> dict:
    """``{"formula": sexpr, "predicates": {name: {...}}}``; unnamed stay inline."""
    return {
        "formula": to_sexpr(phi),
        "predicates": {k: predicate_to_dict(v) for k, v in sorted(bindings_of(phi).items())},
    }


def formula_from_json(d: Mapping) -> Formula:
    binds = {k: predicate_from_dict(k, v) for k, v in d.get("predicates", {}).items()}
    return parse_sexpr(d["formula"], binds)


def max_abs_over_box(p: LinearPredicate, lo: np.ndarray, hi: np.ndarray) -> float:
    """max |h(x)| for x in the box [lo, hi]; inf if the box is open where h looks."""
    c = np.asarray(p.coefficients)
    active = c != 0
    if not np.all(np.isfinite(lo[active])) or not np.all(np.isfinite(hi[active])):
        return math.inf
    lo_a, hi_a, c_a = lo[active], hi[active], c[active]
    top = np.sum(np.maximum(c_a * lo_a, c_a * hi_a)) - p.offset
    bot = np.sum(np.minimum(c_a * lo_a, c_a * hi_a)) - p.offset
    return float(max(abs(top), abs(bot)))


__all__ = [
    "HorizonError", "FormulaSyntaxError", "LinearPredicate", "TimeInterval", "Trajectory",
    "TrueF", "FalseF", "Predicate", "Not", "And", "Or", "Until", "Eventually", "Always",
    "Formula", "pred", "conj", "disj", "eventually", "always", "until", "box_inside",
    "box_outside", "horizon", "well_formed", "to_nnf", "robustness", "satisfies",
    "to_sexpr", "parse_sexpr", "bindings_of", "formula_to_json", "formula_from_json",
    "predicates", "has_negation", "size", "max_abs_over_box",
]
