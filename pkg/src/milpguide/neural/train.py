"""Gradients, Adam, mini-batch training with best-validation selection, checkpoints."""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..bnb.config import block_slices
from ..features import BipartiteGraph
from .losses import MARGIN, TAU, info_nce_loss, rank_loss
from .model import DTYPE, GatModel, ModelSchemaError, forward_tensors, graph_tensors, score_sets_tensor

CHECKPOINT_SCHEMA = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class RankItem:
    """One instance: its graph, evaluated candidate sets and (i, j, y) pairs over them."""
    graph: BipartiteGraph
    sets: list
    pairs: np.ndarray        # (P, 3) ints: index of B1, index of B2, y in {-1, +1}
    name: str = ""


@dataclass
class ContrastItem:
    graph: BipartiteGraph
    positives: np.ndarray    # (k+, D)
    negatives: np.ndarray    # (k-, D)
    name: str = ""


@dataclass
class TrainData:
    mode: str
    train: list
    validation: list


@dataclass
class Hyper:
    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    L: int = 64
    H: int = 8
    margin: float = MARGIN
    tau: float = TAU
    time_budget: float = math.inf   # seconds; stops after the epoch that crosses it


@dataclass
class TrainState:
    params: dict
    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: dict, lr=1e-3, batch_size=32, epochs=200, seed=0) -> "TrainState":
        z = {k: torch.zeros_like(p, dtype=DTYPE).detach() for k, p in params.items()}
        return cls(params, z, {k: t.clone() for k, t in z.items()}, 0, lr, batch_size, epochs, seed)


def gradients(model: GatModel, loss_fn) -> tuple[float, dict]:
    """loss_fn(model) -> scalar tensor; returns (loss, {name: grad ndarray})."""
    names = list(model.params)
    loss = loss_fn(model)
    if not loss.requires_grad:
        return float(loss), {k: np.zeros(tuple(model.params[k].shape)) for k in names}
    grads = torch.autograd.grad(loss, [model.params[k] for k in names], allow_unused=True)
    out = {}
    for k, g in zip(names, grads):
        out[k] = np.zeros(tuple(model.params[k].shape)) if g is None else g.detach().numpy().copy()
    return float(loss.detach()), out


def adam_step(state: TrainState, grads: dict) -> TrainState:
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    with torch.no_grad():
        for k, p in state.params.items():
            g = torch.as_tensor(grads[k], dtype=DTYPE)
            if g.shape != p.shape:
                raise TrainingError(f"gradient shape {tuple(g.shape)} != parameter {k} shape {tuple(p.shape)}")
            state.m[k].mul_(b1).add_((1 - b1) * g)
            state.v[k].mul_(b2).add_((1 - b2) * g * g)
            p.sub_(state.lr * (state.m[k] / c1) / (torch.sqrt(state.v[k] / c2) + state.eps))
    return state


# --- per-item losses ---------------------------------------------------------------------------

def rank_item_loss(model: GatModel, item: RankItem, margin: float = MARGIN) -> torch.Tensor:
    s = score_sets_tensor(model, item.graph, item.sets)
    P = np.asarray(item.pairs, dtype=np.int64).reshape(-1, 3)
    y = torch.as_tensor(P[:, 2], dtype=DTYPE)
    return rank_loss(s[P[:, 0]], s[P[:, 1]], y, margin).mean()


def config_output(model: GatModel, graph: BipartiteGraph) -> torch.Tensor:
    return forward_tensors(model, graph_tensors(graph))[0]


def contrast_item_loss(model: GatModel, item: ContrastItem, tau: float = TAU) -> torch.Tensor:
    return info_nce_loss(config_output(model, item.graph), item.positives, item.negatives, tau)


def item_loss(model, item, hyper: Hyper):
    if isinstance(item, RankItem):
        return rank_item_loss(model, item, hyper.margin)
    return contrast_item_loss(model, item, hyper.tau)


# --- metrics -----------------------------------------------------------------------------------

def pairwise_accuracy(model: GatModel, items) -> float:
    hit = tot = 0
    with torch.no_grad():
        for it in items:
            s = score_sets_tensor(model, it.graph, it.sets).numpy()
            P = np.asarray(it.pairs, dtype=np.int64).reshape(-1, 3)
            hit += int(np.sum(np.sign(s[P[:, 0]] - s[P[:, 1]]) == P[:, 2]))
            tot += len(P)
    return hit / tot if tot else float("nan")


def block_argmax(vec) -> np.ndarray:
    """One-hot of the per-parameter argmax (ties -> lowest option index)."""
    vec = np.asarray(vec, dtype=float)
    out = np.zeros_like(vec)
    for sl in block_slices():
        out[sl.start + int(np.argmax(vec[sl]))] = 1.0
    return out


def nearer_positive(pred_onehot, positives, negatives) -> bool:
    dp = np.mean([np.sum(np.abs(pred_onehot - a)) for a in positives])
    dn = np.mean([np.sum(np.abs(pred_onehot - a)) for a in negatives])
    return bool(dp < dn)


def contrast_accuracy(model: GatModel, items) -> float:
    if not items:
        return float("nan")
    with torch.no_grad():
        hits = [nearer_positive(block_argmax(config_output(model, it.graph).numpy()), it.positives, it.negatives)
                for it in items]
    return float(np.mean(hits))


def accuracy(model, items) -> float:
    if not items:
        return float("nan")
    return pairwise_accuracy(model, items) if isinstance(items[0], RankItem) else contrast_accuracy(model, items)


def mean_loss(model, items, hyper: Hyper) -> float:
    with torch.no_grad():
        return float(np.mean([float(item_loss(model, it, hyper)) for it in items])) if items else float("nan")


# --- training ----------------------------------------------------------------------------------

def train(data: TrainData, hyper: Hyper | None = None, log=None):
    """Returns (best-validation model, history dict)."""
    hyper = hyper or Hyper()
    if not data.train:
        raise TrainingError("training set is empty")
    val = data.validation or data.train
    model = GatModel(data.mode, hyper.L, hyper.H, hyper.seed)
    state = TrainState.fresh(model.params, hyper.lr, hyper.batch_size, hyper.epochs, hyper.seed)
    rng = np.random.default_rng(hyper.seed)
    hist = {"train_loss": [], "val_loss": [], "val_acc": [], "best_epoch": -1}
    best, best_loss = model.copy(), mean_loss(model, val, hyper)
    t0 = time.perf_counter()
    for ep in range(hyper.epochs):
        order = rng.permutation(len(data.train))
        losses = []
        for bi in range(0, len(order), hyper.batch_size):
            batch = [data.train[i] for i in order[bi:bi + hyper.batch_size]]
            loss, g = gradients(model, lambda mdl: torch.stack([item_loss(mdl, it, hyper) for it in batch]).mean())
            if not math.isfinite(loss):
                raise TrainingError(f"loss is {loss} at epoch {ep}, batch {bi // hyper.batch_size}")
            for k, gk in g.items():
                if not np.all(np.isfinite(gk)):
                    raise TrainingError(f"non-finite gradient for {k} at epoch {ep}, batch {bi // hyper.batch_size}")
            adam_step(state, g)
            losses.append(loss)
        vl = mean_loss(model, val, hyper)
        hist["train_loss"].append(float(np.mean(losses)))
        hist["val_loss"].append(vl)
        hist["val_acc"].append(accuracy(model, val))
        if vl < best_loss:
            best_loss, best = vl, model.copy()
            hist["best_epoch"] = ep
        if log:
            log(f"epoch {ep} train {hist['train_loss'][-1]:.5f} val {vl:.5f} acc {hist['val_acc'][-1]:.3f}")
        if time.perf_counter() - t0 > hyper.time_budget:
            break
    best.check_finite()
    return best, hist


# --- checkpoints -------------------------------------------------------------------------------

def save_checkpoint(model: GatModel, path, extra: dict | None = None) -> None:
    d = {"schema_version": CHECKPOINT_SCHEMA, "mode": model.mode, "L": model.L, "H": model.H, "seed": model.seed,
         "params": {k: {"shape": list(p.shape), "data": p.detach().reshape(-1).tolist()} for k, p in model.params.items()},
         "extra": extra or {}}
    Path(path).write_text(json.dumps(d))


def load_checkpoint(path) -> GatModel:
    d = json.loads(Path(path).read_text())
    if d.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ModelSchemaError(f"checkpoint schema {d.get('schema_version')} != {CHECKPOINT_SCHEMA}")
    params = {k: torch.tensor(v["data"], dtype=DTYPE).reshape(v["shape"]).requires_grad_(True)
              for k, v in d["params"].items()}
    return GatModel(d["mode"], int(d["L"]), int(d["H"]), int(d["seed"]), params)


def params_digest(model: GatModel) -> str:
    h = hashlib.sha256()
    for k in sorted(model.params):
        h.update(k.encode())
        h.update(model.params[k].detach().numpy().tobytes())
    return h.hexdigest()
