import json
import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from milpguide.bnb.config import Limits, SolverConfig, encode_config, random_config
from milpguide.bnb.solver import solve
from milpguide.guidance.backdoor import (GuidanceError, collect_backdoors, evaluate_backdoor, infer_backdoor,
                                         proxy_key, random_backdoor, rank_pairs, sample_backdoor_candidates,
                                         sampling_weights)
from milpguide.guidance.configs import add_integrals, collect_configs, contrast_sets, infer_config
from milpguide.guidance.dataset import (build_contrastive_dataset, build_rank_dataset, load_dataset, split_names,
                                        to_train_data, write_dataset)
from milpguide.milp.instance import MilpInstance
from milpguide.milp.simplex import lp_relax_solve
from milpguide.neural.model import GatModel


def knapsack(seed, n=18, m=3):
    rng = np.random.default_rng(seed)
    W = rng.integers(5, 30, size=(m, n)).astype(float)
    v = rng.integers(5, 40, size=n).astype(float)
    cap = np.floor(W.sum(axis=1) / 2)
    return MilpInstance(-v, sp.csr_matrix(W), cap, np.array(["L"] * m), np.zeros(n), np.ones(n), list(range(n)))


LIM = Limits(node_limit=400)


def test_candidates_are_valid_and_deterministic():
    inst = knapsack(0)
    root = lp_relax_solve(inst)
    a = sample_backdoor_candidates(inst, root, 20, 8, seed=3)
    b = sample_backdoor_candidates(inst, root, 20, 8, seed=3)
    assert [c.members for c in a] == [c.members for c in b]
    ints = set(inst.int_set.tolist())
    for c in a:
        assert len(set(c.members)) == 8 and set(c.members) <= ints


def test_sampling_prefers_fractional_variables():
    inst = knapsack(1)
    root = lp_relax_solve(inst)
    w = sampling_weights(inst, root)
    assert np.all(w > 0) and w.sum() == pytest.approx(1.0)
    frac = np.abs(root.values - np.round(root.values))
    j_frac = int(np.argmax(frac))
    counts = np.zeros(inst.n)
    for c in sample_backdoor_candidates(inst, root, 400, 2, seed=0):
        counts[list(c.members)] += 1
    integral = [j for j in range(inst.n) if frac[j] < 1e-9]
    assert counts[j_frac] > np.mean(counts[integral])


def test_too_few_integers_rejected():
    inst = knapsack(0, n=5)
    with pytest.raises(GuidanceError):
        sample_backdoor_candidates(inst, lp_relax_solve(inst), 5, 8)


def test_backdoor_never_changes_optimum():
    inst = knapsack(2)
    base = solve(inst)
    root = lp_relax_solve(inst)
    for c in sample_backdoor_candidates(inst, root, 8, 8, seed=1):
        r = evaluate_backdoor(inst, c.members)
        assert r["status"] == "optimal" and r["objective"] == pytest.approx(base.objective, abs=1e-6)


def test_all_integers_equal_priority_matches_default():
    inst = knapsack(3)
    assert evaluate_backdoor(inst, inst.int_set)["node_count"] == solve(inst).node_count


def test_evaluate_rejects_continuous_member():
    inst = knapsack(0)
    inst2 = MilpInstance(inst.obj, inst.A, inst.rhs, inst.sense, inst.lb, inst.ub, list(range(inst.n - 1)))
    with pytest.raises(GuidanceError):
        evaluate_backdoor(inst2, [inst.n - 1])


def test_censored_runs_rank_last():
    done = {"status": "optimal", "node_count": 900, "lp_iterations": 5000}
    cut = {"status": "limit", "node_count": 10, "lp_iterations": 10}
    assert proxy_key(done) < proxy_key(cut)


def _recs(nodes):
    return [{"status": "optimal", "node_count": n, "lp_iterations": 0} for n in nodes]


def test_rank_pairs_labels_and_balance():
    nodes = list(range(100, 130))
    P = rank_pairs(_recs(nodes))
    assert len(P) == 225
    for i, j, y in P:
        assert y == (1 if nodes[i] < nodes[j] else -1)
    assert abs(int(np.sum(P[:, 2] == 1)) - int(np.sum(P[:, 2] == -1))) <= 1


def test_rank_pairs_drop_ties_and_need_enough_candidates():
    P = rank_pairs(_recs([5] * 20 + [6] * 10))
    assert all(y != 0 for _, _, y in P)
    assert len(P) == 15 * 10   # 15 fastest all have 5; the 10 slow 6's pair with them, 5-vs-5 dropped
    with pytest.warns(UserWarning):
        assert rank_pairs(_recs(range(10))) is None


def test_collect_backdoors_budget_and_determinism():
    inst = knapsack(4)
    a = collect_backdoors(inst, 30, LIM, seed=2, swaps=4)
    b = collect_backdoors(inst, 30, LIM, seed=2, swaps=4)
    strip = lambda d: [(c["members"], c["record"]["node_count"], c["record"]["lp_iterations"])
                       for c in d["candidates"]]
    assert strip(a) == strip(b)
    assert 30 <= len(a["candidates"]) <= 34
    sampled = [c for c in a["candidates"] if c["provenance"] == "fractionality_sampled"]
    improved = [c for c in a["candidates"] if c["provenance"] == "locally_improved"]
    assert len(sampled) == 30
    best = min(proxy_key(c["record"]) for c in sampled)
    for c in improved:
        assert proxy_key(c["record"]) < best


def test_infer_and_random_backdoor():
    inst = knapsack(5)
    model = GatModel("backdoor_score", L=8, H=2)
    prio, members, scores = infer_backdoor(model, inst, count=12, seed=1)
    root = lp_relax_solve(inst)
    cands = [c.members for c in sample_backdoor_candidates(inst, root, 12, 8, seed=1)]
    assert members == cands[int(np.argmax(scores))]
    assert set(prio.values) == set(members)
    _, rmembers = random_backdoor(inst, count=12, seed=1, pick_seed=4)
    assert rmembers in cands


# --- configurations ----------------------------------------------------------------------------

def _crec(pb, pi, seed):
    return {"config": random_config(np.random.default_rng(seed)).to_dict(), "primal_bound": pb,
            "primal_integral": pi, "lp_iterations": 10, "trace": []}


def test_contrast_sets_extremes():
    recs = [_crec(float(i), 0.0, i) for i in range(20)]
    pos, neg = contrast_sets(recs)
    assert len(pos) == 3 and len(neg) == 3
    assert {p.tobytes() for p in pos}.isdisjoint({n.tobytes() for n in neg})
    assert pos[0].tobytes() == encode_config(random_config(np.random.default_rng(0))).tobytes()


def test_contrast_sets_degenerate_cases():
    with pytest.warns(UserWarning):
        assert contrast_sets([_crec(None, 1.0, i) for i in range(10)]) is None
    with pytest.warns(UserWarning):
        assert contrast_sets([_crec(5.0, 0.5, i) for i in range(10)]) is None


def test_contrast_drops_negatives_tied_with_positives():
    recs = [_crec(1.0, 0.0, i) for i in range(18)] + [_crec(2.0, 0.0, 18), _crec(3.0, 0.0, 19)]
    pos, neg = contrast_sets(recs)
    assert len(pos) == 3 and len(neg) == 2


def test_add_integrals_uses_best_bound():
    recs = [{"primal_bound": 10.0, "lp_iterations": 100, "trace": [[0, 10.0]]},
            {"primal_bound": 12.0, "lp_iterations": 50, "trace": [[20, 12.0]]}]
    assert add_integrals(recs) == 10.0
    assert recs[0]["primal_integral"] == 0.0
    assert recs[1]["primal_integral"] == pytest.approx(20 + 0.2 * 80)


def test_collect_configs_minimum_and_determinism():
    inst = knapsack(6)
    with pytest.raises(GuidanceError):
        collect_configs(inst, 4)
    a = collect_configs(inst, 8, Limits(node_limit=30), seed=1, swaps=2)
    b = collect_configs(inst, 8, Limits(node_limit=30), seed=1, swaps=2)
    key = lambda d: [(r["config"], r["primal_bound"], r["lp_iterations"], r["primal_integral"]) for r in d["records"]]
    assert key(a) == key(b)


def test_infer_config_decodes():
    inst = knapsack(7)
    assert isinstance(infer_config(GatModel("config_logits", L=8, H=2), inst), SolverConfig)


# --- datasets ----------------------------------------------------------------------------------

def test_split_names():
    s = split_names([f"a{i}" for i in range(10)], 0.2, seed=0)
    assert sum(v == "validation" for v in s.values()) == 2
    assert s == split_names([f"a{i}" for i in range(10)], 0.2, seed=0)
    assert list(split_names(["x"]).values()) == ["train"]


def test_rank_dataset_round_trip_and_bytes(tmp_path):
    insts = [(f"k{i}", knapsack(10 + i)) for i in range(3)]
    ds1 = build_rank_dataset(insts, 30, LIM, seed=0, swaps=2)
    ds2 = build_rank_dataset(insts, 30, LIM, seed=0, swaps=2)
    write_dataset(ds1, tmp_path / "a")
    write_dataset(ds2, tmp_path / "b")
    for sub in ("manifest.json", "labels/k0.json", "graphs/k0.json"):
        if (tmp_path / "a" / sub).exists():
            assert (tmp_path / "a" / sub).read_bytes() == (tmp_path / "b" / sub).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(man["instances"]) + len(man["skipped"]) == 3
    assert len(man["instances"]) >= 2
    data = load_dataset(tmp_path / "a")
    mem = to_train_data(ds1)
    assert [i.name for i in data.train] == [i.name for i in mem.train]
    for x, y in zip(data.train + data.validation, mem.train + mem.validation):
        assert np.array_equal(x.pairs, y.pairs) and x.sets == y.sets
        assert np.array_equal(x.graph.V, y.graph.V)


def test_contrastive_dataset_round_trip(tmp_path):
    insts = [(f"k{i}", knapsack(20 + i)) for i in range(2)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = build_contrastive_dataset(insts, 10, Limits(node_limit=15), seed=0, swaps=2)
    write_dataset(ds, tmp_path)
    data = load_dataset(tmp_path)
    assert data.mode == "config_logits"
    assert len(data.train + data.validation) >= 1
    for it in data.train + data.validation:
        assert it.positives.shape[1] == 35 and len(it.negatives) > 0


def test_dataset_budget_guard():
    with pytest.raises(GuidanceError):
        build_rank_dataset([("k", knapsack(0))], 10)
