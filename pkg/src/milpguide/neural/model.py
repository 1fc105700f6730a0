"""Two-round graph attention network over the variable/constraint bipartite graph.

Round 1 updates constraint embeddings from incident (variable, edge) messages,
round 2 updates variable embeddings from incident (constraint, edge) messages.
Each round has H heads; attention logits use the GATv2 form
``a . leaky_relu(W [h_dst | h_src | h_edge])``. Every node also attends to a
self-message (its own embedding, zero edge), so nodes without neighbours are
well defined.

Tensors are float64. Inputs may carry a leading batch axis over candidate
feature matrices that share one topology (used to score many backdoor sets in
a single pass).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from ..bnb.config import ONE_HOT_DIM
from ..features import N_CON_FEATURES, N_VAR_FEATURES, BipartiteGraph

MODES = ("backdoor_score", "config_logits")
LEAKY_SLOPE = 0.2
DTYPE = torch.float64


class ModelSchemaError(ValueError):
    pass


def _round_shapes(L: int, H: int) -> dict:
    d = L // H
    return {"Wa_dst": (L, H * d), "Wa_src": (L, H * d), "Wa_e": (L, H * d), "a": (H, d),
            "Wm_src": (L, H * d), "Wm_e": (L, H * d), "b": (H * d,)}


def param_shapes(mode: str, L: int, H: int) -> dict:
    dv = N_VAR_FEATURES + (1 if mode == "backdoor_score" else 0)
    shapes = {"Pv": (dv, L), "pv": (L,), "Pc": (N_CON_FEATURES, L), "pc": (L,), "Pe": (1, L), "pe": (L,)}
    for r in (1, 2):
        for k, s in _round_shapes(L, H).items():
            shapes[f"r{r}_{k}"] = s
    head_in = L if mode == "backdoor_score" else 2 * L
    out = 1 if mode == "backdoor_score" else ONE_HOT_DIM
    shapes.update({"M1": (head_in, L), "m1": (L,), "M2": (L, out), "m2": (out,)})
    return shapes


@dataclass
class GatModel:
    mode: str = "backdoor_score"
    L: int = 64
    H: int = 8
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ModelSchemaError(f"mode must be one of {MODES}")
        if self.L % self.H:
            raise ModelSchemaError(f"L={self.L} is not divisible by H={self.H}")
        if not self.params:
            self.params = init_params(self.mode, self.L, self.H, self.seed)

    @property
    def var_width(self) -> int:
        return self.params["Pv"].shape[0]

    def parameters(self) -> list[torch.Tensor]:
        return [self.params[k] for k in self.params]

    def check_finite(self):
        for k, p in self.params.items():
            if not torch.isfinite(p).all():
                raise FloatingPointError(f"parameter {k} is not finite")

    def copy(self) -> "GatModel":
        return GatModel(self.mode, self.L, self.H, self.seed,
                        {k: v.detach().clone().requires_grad_(True) for k, v in self.params.items()})


def init_params(mode: str, L: int, H: int, seed: int) -> dict:
    g = torch.Generator().manual_seed(int(seed))
    out = {}
    for name, shape in param_shapes(mode, L, H).items():
        if len(shape) == 1:
            t = torch.zeros(shape, dtype=DTYPE)
        else:
            fan_in, fan_out = shape[0], shape[-1]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            t = (torch.rand(shape, generator=g, dtype=DTYPE) * 2 - 1) * bound
        out[name] = t.requires_grad_(True)
    return out


@dataclass
class GraphTensors:
    V: torch.Tensor         # (B, n, dv)
    C: torch.Tensor         # (m, 4)
    E: torch.Tensor         # (|E|, 1)
    var_idx: torch.Tensor   # (|E|,)
    con_idx: torch.Tensor   # (|E|,)


def graph_tensors(graph: BipartiteGraph, V: np.ndarray | None = None) -> GraphTensors:
    V = graph.V if V is None else V
    Vt = torch.as_tensor(np.asarray(V, dtype=float), dtype=DTYPE)
    if Vt.dim() == 2:
        Vt = Vt.unsqueeze(0)
    e = torch.as_tensor(graph.edges, dtype=torch.long).reshape(-1, 2)
    return GraphTensors(Vt, torch.as_tensor(graph.C, dtype=DTYPE), torch.as_tensor(graph.E, dtype=DTYPE).reshape(-1, 1),
                        e[:, 0].contiguous(), e[:, 1].contiguous())


def _attend(p: dict, r: str, H: int, h_dst, h_src, h_edge, src_idx, dst_idx):
    """One attention round; h_dst (B, nd, L), h_src (B, ns, L), h_edge (|E|, L)."""
    Bsz, nd, L = h_dst.shape
    d = L // H
    P_dst = h_dst @ p[f"{r}_Wa_dst"]
    P_src = h_src @ p[f"{r}_Wa_src"]
    P_e = h_edge @ p[f"{r}_Wa_e"]
    M_src = h_src @ p[f"{r}_Wm_src"]
    M_e = h_edge @ p[f"{r}_Wm_e"]
    a = p[f"{r}_a"]

    pre = P_dst[:, dst_idx] + P_src[:, src_idx] + P_e                     # (B, |E|, L)
    score = (F.leaky_relu(pre.reshape(Bsz, -1, H, d), LEAKY_SLOPE) * a).sum(-1)   # (B, |E|, H)
    msg = (M_src[:, src_idx] + M_e).reshape(Bsz, -1, H, d)
    # self-message: the destination embedding seen through the source weights, zero edge
    pre_s = P_dst + h_dst @ p[f"{r}_Wa_src"]
    score_s = (F.leaky_relu(pre_s.reshape(Bsz, nd, H, d), LEAKY_SLOPE) * a).sum(-1)  # (B, nd, H)
    msg_s = (h_dst @ p[f"{r}_Wm_src"]).reshape(Bsz, nd, H, d)

    # segment softmax over {self} U incoming edges, max-shifted (the shift is constant per segment)
    with torch.no_grad():
        mx = score_s.clone()
        if dst_idx.numel():
            idx = dst_idx.view(1, -1, 1).expand(Bsz, -1, H)
            mx = mx.scatter_reduce(1, idx, score, reduce="amax", include_self=True)
    w_s = torch.exp(score_s - mx)
    den = w_s
    out = w_s.unsqueeze(-1) * msg_s
    if dst_idx.numel():
        w = torch.exp(score - mx[:, dst_idx])
        den = den.index_add(1, dst_idx, w)
        out = out.index_add(1, dst_idx, w.unsqueeze(-1) * msg)
    out = out / den.unsqueeze(-1)
    return torch.relu(out.reshape(Bsz, nd, L) + p[f"{r}_b"])


def forward_tensors(model: GatModel, gt: GraphTensors) -> torch.Tensor:
    p = model.params
    if gt.V.shape[-1] != p["Pv"].shape[0] or gt.C.shape[-1] != p["Pc"].shape[0]:
        raise ModelSchemaError(f"graph widths V={gt.V.shape[-1]}, C={gt.C.shape[-1]} do not match model "
                               f"({p['Pv'].shape[0]}, {p['Pc'].shape[0]})")
    Bsz = gt.V.shape[0]
    hv = gt.V @ p["Pv"] + p["pv"]
    hc = (gt.C @ p["Pc"] + p["pc"]).unsqueeze(0).expand(Bsz, -1, -1)
    he = gt.E @ p["Pe"] + p["pe"]
    c2 = _attend(p, "r1", model.H, hc, hv, he, gt.var_idx, gt.con_idx)
    v2 = _attend(p, "r2", model.H, hv, c2, he, gt.con_idx, gt.var_idx)
    if model.mode == "backdoor_score":
        z = torch.relu(v2 @ p["M1"] + p["m1"]) @ p["M2"] + p["m2"]
        return torch.sigmoid(z.squeeze(-1))                                 # (B, n)
    pooled = torch.cat([v2.mean(1), c2.mean(1)], dim=-1)
    return torch.sigmoid(torch.relu(pooled @ p["M1"] + p["m1"]) @ p["M2"] + p["m2"])   # (B, D)


def forward(model: GatModel, graph: BipartiteGraph, V: np.ndarray | None = None) -> np.ndarray:
    """Per-variable scores (backdoor mode, V given with the membership column) or the D-vector (config mode)."""
    if model.mode == "backdoor_score" and V is None:
        V = np.hstack([graph.V, np.zeros((graph.n, 1))])
    with torch.no_grad():
        out = forward_tensors(model, graph_tensors(graph, V))
    return out[0].numpy() if out.shape[0] == 1 else out.numpy()


def membership_batch(graph: BipartiteGraph, sets) -> np.ndarray:
    Vb = np.repeat(np.hstack([graph.V, np.zeros((graph.n, 1))])[None], len(sets), axis=0)
    for k, B in enumerate(sets):
        Vb[k, np.asarray(list(B), dtype=np.int64), -1] = 1.0
    return Vb


def _check_set(graph: BipartiteGraph, B):
    B = [int(j) for j in B]
    if not B:
        raise ValueError("backdoor set must be non-empty")
    ints = set(int(j) for j in graph.int_vars)
    bad = [j for j in B if j not in ints]
    if bad:
        raise ValueError(f"backdoor members {bad} are not integer variables")
    return B


def score_sets_tensor(model: GatModel, graph: BipartiteGraph, sets, gt: GraphTensors | None = None) -> torch.Tensor:
    """Differentiable scores (mean member output) for a list of candidate sets."""
    sets = [_check_set(graph, B) for B in sets]
    base = gt or graph_tensors(graph)
    Vb = torch.as_tensor(membership_batch(graph, sets), dtype=DTYPE)
    out = forward_tensors(model, GraphTensors(Vb, base.C, base.E, base.var_idx, base.con_idx))
    mask = Vb[..., -1]
    return (out * mask).sum(1) / mask.sum(1)


def score_backdoor(model: GatModel, graph: BipartiteGraph, B) -> float:
    with torch.no_grad():
        return float(score_sets_tensor(model, graph, [B])[0])


def score_backdoors(model: GatModel, graph: BipartiteGraph, sets, chunk: int = 64) -> np.ndarray:
    res = []
    with torch.no_grad():
        gt = graph_tensors(graph)
        for i in range(0, len(sets), chunk):
            res.append(score_sets_tensor(model, graph, sets[i:i + chunk], gt).numpy())
    return np.concatenate(res) if res else np.zeros(0)
