import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from milpguide.milp.instance import InstanceError, MilpInstance, ModelBuilder, ParseError, from_json_dict, to_json_dict
from milpguide.milp.mps import export_mps, import_instance, parse_mps
from milpguide.milp.presolve import presolve
from milpguide.milp.simplex import SimplexLP, dual_objective, lp_relax_solve
from oracles import lp_vertex_enumeration, milp_enumeration, random_lp, random_milp


def _inst(c, A, rhs, sense, lb, ub, ints=()):
    A = np.asarray(A, dtype=float).reshape(len(rhs), len(c))
    return MilpInstance(np.array(c, float), sp.csr_matrix(A), np.array(rhs, float), np.array(sense),
                        np.array(lb, float), np.array(ub, float), list(ints))


# --- instance ----------------------------------------------------------------------------------

def test_builder_and_counts():
    b = ModelBuilder()
    x = b.add_var(0, 4, 1.0, integer=True, name="x")
    z = b.add_binary(name="z")
    y = b.add_var(-1, 1, 0.5, name="y")
    b.add_row({x: 1.0, z: 2.0, y: -1.0}, "L", 3.0)
    inst = b.build()
    c = inst.counts()
    assert (c["binary"], c["integer"], c["continuous"], c["constraints"]) == (1, 1, 1, 1)
    assert inst.is_feasible(np.array([1.0, 1.0, 0.0]))
    assert not inst.is_feasible(np.array([1.5, 1.0, 0.0]))


def test_validate_rejects_bad_shapes():
    with pytest.raises(InstanceError):
        MilpInstance(np.zeros(2), sp.csr_matrix(np.zeros((1, 3))), np.zeros(1), np.array(["L"]),
                     np.zeros(2), np.ones(2), []).validate()


def test_json_round_trip():
    rng = np.random.default_rng(3)
    inst = random_milp(rng)
    back = from_json_dict(json.loads(json.dumps(to_json_dict(inst))))
    assert back.equals(inst)


# --- simplex -----------------------------------------------------------------------------------

def test_lp_example_two_vars():
    inst = _inst([-1, -1], [[1, 1]], [1.5], ["L"], [0, 0], [1, 1])
    sol = lp_relax_solve(inst)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(-1.5, abs=1e-9)
    ref, _ = lp_vertex_enumeration(inst.obj, inst.A, inst.rhs, inst.sense, inst.lb, inst.ub)
    assert ref == pytest.approx(-1.5)


def test_lp_contradictory_bounds_infeasible():
    inst = _inst([1.0], np.zeros((0, 1)), [], [], [2.0], [1.0])
    assert lp_relax_solve(inst).status == "infeasible"


def test_lp_unbounded():
    inst = _inst([-1.0], np.zeros((0, 1)), [], [], [0.0], [np.inf])
    assert lp_relax_solve(inst).status == "unbounded"


@pytest.mark.parametrize("pricing", ["dantzig", "bland"])
def test_simplex_matches_vertex_enumeration(pricing):
    rng = np.random.default_rng(11)
    n_inf = 0
    for _ in range(150):
        inst = random_lp(rng)
        ref, _ = lp_vertex_enumeration(inst.obj, inst.A, inst.rhs, inst.sense, inst.lb, inst.ub)
        sol = lp_relax_solve(inst, pricing=pricing)
        if ref is None:
            n_inf += 1
            assert sol.status == "infeasible"
            continue
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(ref, abs=1e-7)
        assert inst.max_violation(sol.values) <= 1e-7
        assert dual_objective(inst, sol) <= sol.objective + 1e-6
    assert n_inf < 150


def test_warm_start_gives_same_optimum():
    rng = np.random.default_rng(5)
    for _ in range(30):
        inst = random_lp(rng)
        lp = SimplexLP(inst)
        s0 = lp.solve(inst.lb, inst.ub)
        if s0.status != "optimal":
            continue
        ub = inst.ub.copy()
        ub[0] = (inst.lb[0] + inst.ub[0]) / 2
        cold = lp.solve(inst.lb, ub)
        warm = lp.solve(inst.lb, ub, warm=s0.basis)
        assert cold.status == warm.status
        if cold.status == "optimal":
            assert warm.objective == pytest.approx(cold.objective, abs=1e-7)


def test_solves_are_deterministic():
    rng = np.random.default_rng(2)
    inst = random_lp(rng, n=6, m=6)
    a, b = lp_relax_solve(inst), lp_relax_solve(inst)
    assert a.status == b.status and a.iterations == b.iterations
    assert np.array_equal(a.values, b.values, equal_nan=True)


# --- presolve ----------------------------------------------------------------------------------

def test_presolve_singleton_row_fixes_binary():
    inst = _inst([-1.0, -1.0], [[2.0, 0.0]], [1.0], ["L"], [0, 0], [1, 1], ints=[0, 1])
    res = presolve(inst)
    assert not res.infeasible
    x = res.postsolve(np.ones(res.instance.n))
    assert x[0] == 0.0


def test_presolve_empty_instance_unchanged():
    inst = _inst([], np.zeros((0, 0)), [], [], [], [])
    res = presolve(inst)
    assert not res.infeasible and res.instance.n == 0 and res.instance.m == 0


def test_presolve_detects_infeasible_empty_row():
    inst = _inst([1.0], [[0.0]], [-1.0], ["L"], [0], [1])
    assert presolve(inst).infeasible


def test_presolve_preserves_optimum():
    rng = np.random.default_rng(21)
    for k in range(100):
        inst = random_milp(rng, general=k % 2 == 0)
        v, _ = milp_enumeration(inst)
        res = presolve(inst)
        if res.infeasible:
            assert v is None
            continue
        v2, x2 = milp_enumeration(res.instance)
        assert (v is None) == (v2 is None)
        if v is not None:
            assert v2 == pytest.approx(v, abs=1e-6)
            assert inst.is_feasible(res.postsolve(x2))


# --- MPS ---------------------------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_mps_round_trip(seed):
    inst = random_milp(np.random.default_rng(seed), general=seed % 2 == 0)
    assert parse_mps(export_mps(inst)).equals(inst)


def test_mps_infinite_bound_markers(tmp_path):
    inst = _inst([1, 1, 1, 1], [[1, 1, 1, 1]], [1], ["G"], [-np.inf, -np.inf, 0, 2], [np.inf, 5, np.inf, 2])
    text = export_mps(inst)
    assert " FR " in text and " MI " in text and " PL " in text and " FX " in text
    p = tmp_path / "a.mps"
    export_mps(inst, p)
    assert import_instance(p).equals(inst)


def test_mps_unknown_section_is_error():
    text = "NAME X\nROWS\n N OBJ\nFOO\nENDATA\n"
    with pytest.raises(ParseError) as err:
        parse_mps(text)
    assert err.value.line == 4
