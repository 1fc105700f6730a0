import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from milpguide.bnb.config import (ONE_HOT_DIM, PARAMETERS, BranchPriority, ConfigError, Limits, SolverConfig,
                                  decode_config, encode_config, random_config)
from milpguide.bnb.heuristics import diving_heuristic, rounding_heuristic
from milpguide.bnb.solver import PreconditionError, branch_select, solve
from milpguide.milp.instance import MilpInstance
from milpguide.milp.simplex import lp_relax_solve
from oracles import milp_enumeration, random_milp


def _inst(c, A, rhs, sense, lb, ub, ints):
    A = np.asarray(A, dtype=float).reshape(len(rhs), len(c))
    return MilpInstance(np.array(c, float), sp.csr_matrix(A), np.array(rhs, float), np.array(sense),
                        np.array(lb, float), np.array(ub, float), list(ints))


def test_two_binary_example():
    inst = _inst([-1, -1], [[1, 1]], [1.5], ["L"], [0, 0], [1, 1], [0, 1])
    res = solve(inst)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(-1.0)
    assert sorted(res.x.tolist()) == [0.0, 1.0]


def test_integral_root_needs_one_node():
    inst = _inst([1, 1], [[1, 1]], [1], ["G"], [0, 0], [1, 1], [0, 1])
    res = solve(inst, SolverConfig(presolve="off", diving="off", rounding_frequency="off"))
    assert res.status == "optimal" and res.node_count == 1


def test_node_limit_one_reports_limit():
    rng = np.random.default_rng(4)
    for _ in range(50):
        inst = random_milp(rng, n_int=10)
        cfg = SolverConfig(diving="off", rounding_frequency="off")
        if solve(inst, cfg).node_count > 1:
            res = solve(inst, cfg, limits=Limits(node_limit=1))
            assert res.status in ("limit", "feasible")
            assert res.node_count == 1
            return
    pytest.skip("no instance needed branching")


def test_infeasible_instance():
    inst = _inst([1, 1], [[1, 1]], [3], ["G"], [0, 0], [1, 1], [0, 1])
    assert solve(inst).status == "infeasible"


def test_branch_select_priority_dominates():
    x = np.zeros(10)
    x[3], x[7] = 0.5, 0.1
    prio = np.zeros(10, dtype=int)
    prio[7] = 10
    assert branch_select(x, np.arange(10), prio) == 7


def test_branch_select_most_fractional_and_ties():
    x = np.zeros(6)
    x[1], x[4] = 0.3, 0.5
    assert branch_select(x, np.arange(6), np.zeros(6, int)) == 4
    x[1] = 0.5
    assert branch_select(x, np.arange(6), np.zeros(6, int)) == 1
    assert branch_select(x, np.arange(6), np.zeros(6, int), SolverConfig(tie_break="reverse_index")) == 4


def test_branch_select_requires_fractional():
    with pytest.raises(PreconditionError):
        branch_select(np.zeros(3), np.arange(3), np.zeros(3, int))


def test_optimal_matches_enumeration_across_configs():
    rng = np.random.default_rng(8)
    cfgs = [SolverConfig()] + [random_config(np.random.default_rng(s)) for s in range(7)]
    for k in range(25):
        inst = random_milp(rng, general=k % 3 == 0)
        v, _ = milp_enumeration(inst)
        for cfg in cfgs:
            res = solve(inst, cfg)
            if v is None:
                assert res.status == "infeasible"
            else:
                assert res.status == "optimal"
                assert res.objective == pytest.approx(v, abs=1e-6)
                assert inst.is_feasible(res.x)


def test_priority_soundness_from_search_log():
    rng = np.random.default_rng(12)
    seen = 0
    for _ in range(30):
        inst = random_milp(rng, n_int=10, n_cont=1)
        B = set(inst.int_set[:3].tolist())
        res = solve(inst, SolverConfig(), BranchPriority.from_set(B), search_log=True)
        for rec in res.search_log:
            if rec["branch_var"] is None:
                continue
            if B & set(rec["fractional"]):
                seen += 1
                assert rec["branch_var"] in B
    assert seen > 0


def test_bound_sandwich():
    rng = np.random.default_rng(13)
    for _ in range(20):
        inst = random_milp(rng, n_int=9)
        v, _ = milp_enumeration(inst)
        if v is None:
            continue
        res = solve(inst, SolverConfig(node_selection="best_bound"), search_log=True)
        assert res.dual_bound <= v + 1e-6
        assert res.search_log[0]["bound"] <= v + 1e-6
        for rec in res.search_log:
            if rec["primal_bound"] is not None:
                assert rec["primal_bound"] >= v - 1e-6


def test_deterministic_runs():
    inst = random_milp(np.random.default_rng(99), n_int=12)
    for cfg in (SolverConfig(), SolverConfig(branching_rule="random", seed=1)):
        a, b = solve(inst, cfg), solve(inst, cfg)
        assert (a.node_count, a.lp_iterations, a.status) == (b.node_count, b.lp_iterations, b.status)
        if a.x is not None:
            assert np.array_equal(a.x, b.x)


def test_rounding_returns_integral_point_unchanged():
    inst = _inst([1, 1], [[1, 1]], [1], ["G"], [0, 0], [1, 1], [0, 1])
    sol = lp_relax_solve(inst)
    x, _ = rounding_heuristic(sol, inst)
    assert np.array_equal(x, sol.values)


def test_rounding_failure_returns_none():
    # x1 + x2 = 1 with LP point (0.5, 0.5): rounding gives (1, 1) -> infeasible, no continuous repair
    inst = _inst([-1, -1], [[1, 1]], [1], ["E"], [0, 0], [1, 1], [0, 1])
    sol = lp_relax_solve(inst)
    if np.all(np.abs(sol.values - np.round(sol.values)) < 1e-9):
        pytest.skip("LP landed on a vertex")
    x, _ = rounding_heuristic(sol, inst)
    assert x is None or inst.is_feasible(x)


def test_diving_returns_feasible_or_none():
    rng = np.random.default_rng(3)
    for _ in range(20):
        inst = random_milp(rng, n_int=8)
        sol = lp_relax_solve(inst)
        if sol.status != "optimal":
            continue
        x, _ = diving_heuristic(sol, inst, 10)
        assert x is None or inst.is_feasible(x)


def test_config_one_hot_round_trip():
    assert ONE_HOT_DIM == 35 and len(PARAMETERS) == 15
    for s in range(50):
        cfg = random_config(np.random.default_rng(s))
        v = encode_config(cfg)
        assert v.sum() == 15
        assert decode_config(v) == cfg


def test_decode_ties_pick_first_option():
    assert decode_config(np.zeros(ONE_HOT_DIM)) == SolverConfig(**{n: o[0] for n, o in PARAMETERS})


def test_config_rejects_unknown_option():
    with pytest.raises(ConfigError):
        SolverConfig(branching_rule="strong")
    with pytest.raises(ConfigError):
        Limits(node_limit=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_priorities_do_not_change_optimum(seed):
    rng = np.random.default_rng(seed)
    inst = random_milp(rng, n_int=8)
    base = solve(inst)
    B = rng.choice(inst.int_set, size=3, replace=False)
    guided = solve(inst, priorities=BranchPriority.from_set(B))
    assert base.status == guided.status
    if base.status == "optimal":
        assert guided.objective == pytest.approx(base.objective, abs=1e-6)


def test_out_of_range_priority_is_rejected():
    inst = _inst([-1, -1], [[1, 1]], [1.5], ["L"], [0, 0], [1, 1], [0, 1])
    with pytest.raises(PreconditionError):
        solve(inst, priorities={5: 1})
