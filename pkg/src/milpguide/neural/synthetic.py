"""Planted-structure datasets for checking that the two training tasks are learnable."""
from __future__ import annotations

import numpy as np

from ..bnb.config import OPTIONS, PARAM_NAMES, SolverConfig, encode_config
from ..features import N_CON_FEATURES, N_VAR_FEATURES, BipartiteGraph
from .train import ContrastItem, RankItem, TrainData


def random_graph(rng: np.random.Generator, n: int, m: int, density: float = 0.3) -> BipartiteGraph:
    V = rng.uniform(-1, 1, (n, N_VAR_FEATURES))
    C = rng.uniform(-1, 1, (m, N_CON_FEATURES))
    mask = rng.random((n, m)) < density
    edges = np.argwhere(mask).astype(np.int64).reshape(-1, 2)
    E = rng.uniform(-1, 1, (len(edges), 1))
    return BipartiteGraph(V, C, edges, E, np.arange(n, dtype=np.int64))


def cross_pairs(proxy, n_side: int = 15) -> np.ndarray:
    """(i, j, y) over the n_side best x n_side worst candidates (lower proxy is better).

    y = +1 when candidate i is the better one; equal proxies are dropped.
    """
    order = np.argsort(proxy, kind="stable")
    fast, slow = order[:n_side], order[-n_side:]
    pairs = []
    for i in fast:
        for j in slow:
            if proxy[i] == proxy[j]:
                continue
            pairs.append((int(i), int(j), 1 if proxy[i] < proxy[j] else -1))
    return np.array(pairs, dtype=np.int64).reshape(-1, 3)


def planted_rank_data(n_train=40, n_val=10, n_test=20, n=20, m=10, k=4, n_cand=30, seed=0):
    """Set cost r(B) = sum over members of w . V_j for one hidden w shared by all instances."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=N_VAR_FEATURES)

    def item(idx):
        g = random_graph(rng, n, m)
        sets = [sorted(rng.choice(n, size=k, replace=False).tolist()) for _ in range(n_cand)]
        r = np.array([float(np.sum(g.V[s] @ w)) for s in sets])
        # alternate which side of the pair is listed first so labels are balanced
        P = cross_pairs(r)
        flip = (np.arange(len(P)) % 2) == 1
        P[flip] = P[flip][:, [1, 0, 2]] * np.array([1, 1, -1])
        return RankItem(g, sets, P, f"rank{idx}")

    items = [item(i) for i in range(n_train + n_val + n_test)]
    return (TrainData("backdoor_score", items[:n_train], items[n_train:n_train + n_val]),
            items[n_train + n_val:])


def _perturb(rng, base: dict, n_changes: int) -> SolverConfig:
    d = dict(base)
    for name in rng.choice(PARAM_NAMES, size=n_changes, replace=False):
        d[str(name)] = OPTIONS[str(name)][int(rng.integers(len(OPTIONS[str(name)])))]
    return SolverConfig.from_dict(d)


def planted_contrast_data(n_train=40, n_val=10, n_test=20, n=15, m=8, n_pos=3, n_neg=3, seed=0):
    """Two prototype configs; which one is 'good' is revealed by the sign of the objective feature."""
    rng = np.random.default_rng(seed)
    protos = [{p: OPTIONS[p][0] for p in PARAM_NAMES}, {p: OPTIONS[p][-1] for p in PARAM_NAMES}]

    def item(idx):
        g = random_graph(rng, n, m)
        cls = int(rng.integers(2))
        g.V[:, 3] = np.abs(g.V[:, 3]) * (1.0 if cls else -1.0)   # objective signs reveal the class
        pos = np.stack([encode_config(_perturb(rng, protos[cls], 2)) for _ in range(n_pos)])
        neg = np.stack([encode_config(_perturb(rng, protos[1 - cls], 2)) for _ in range(n_neg)])
        return ContrastItem(g, pos, neg, f"cfg{idx}")

    items = [item(i) for i in range(n_train + n_val + n_test)]
    return (TrainData("config_logits", items[:n_train], items[n_train:n_train + n_val]),
            items[n_train + n_val:])
