"""Guidance datasets: per-instance graph + label files under one manifest.

Label files exclude wall-clock times (those go to timings.json) so that
re-collecting with the same seeds gives byte-identical files.
"""
from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from ..bnb.config import Limits
from ..features import BipartiteGraph, to_bipartite
from ..milp.simplex import lp_relax_solve
from ..neural.train import ContrastItem, RankItem, TrainData
from .backdoor import K_B, MIN_CANDIDATES, N_SWAPS, GuidanceError, collect_backdoors, rank_pairs
from .configs import FRACTION, collect_configs, contrast_sets

DATASET_SCHEMA = 1
VAL_FRACTION = 0.2


def split_names(names: list[str], val_fraction: float = VAL_FRACTION, seed: int = 0) -> dict:
    """Seeded train/validation assignment; at least one validation instance when there are two or more."""
    n = len(names)
    n_val = 0 if n < 2 else max(1, int(round(val_fraction * n)))
    perm = np.random.default_rng(seed).permutation(n)
    val = set(perm[:n_val].tolist())
    return {name: ("validation" if i in val else "train") for i, name in enumerate(names)}


def _strip_times(obj):
    if isinstance(obj, dict):
        return {k: _strip_times(v) for k, v in obj.items() if k != "wall_time"}
    if isinstance(obj, list):
        return [_strip_times(v) for v in obj]
    return obj


def _times(obj, prefix=""):
    out = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k == "wall_time":
                out[prefix.rstrip("/")] = v
            else:
                out.update(_times(v, f"{prefix}{k}/"))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            out.update(_times(v, f"{prefix}{i}/"))
    return out


def build_rank_dataset(instances, per_instance_budget: int = MIN_CANDIDATES, limits: Limits | None = None,
                       seed: int = 0, k: int = K_B, swaps: int = N_SWAPS, jobs: int = 1,
                       val_fraction: float = VAL_FRACTION, log=None) -> dict:
    """instances: list of (name, MilpInstance). Returns an in-memory dataset dict."""
    if per_instance_budget < MIN_CANDIDATES:
        raise GuidanceError(f"per-instance budget must be at least {MIN_CANDIDATES}")
    limits = limits or Limits(node_limit=1000)
    entries, skipped = [], []
    for idx, (name, inst) in enumerate(instances):
        root = lp_relax_solve(inst)
        coll = collect_backdoors(inst, per_instance_budget, limits, seed + 7919 * idx, k, swaps, jobs, root)
        recs = [c["record"] for c in coll["candidates"]]
        pairs = rank_pairs(recs)
        if pairs is None or len(pairs) == 0:
            skipped.append(name)
            continue
        entries.append({"name": name, "graph": to_bipartite(inst, root), "collection": coll, "pairs": pairs})
        if log:
            log(f"{name}: {len(recs)} candidates, {len(pairs)} pairs")
    splits = split_names([e["name"] for e in entries], val_fraction, seed)
    for e in entries:
        e["split"] = splits[e["name"]]
    return {"kind": "rank", "entries": entries, "skipped": skipped, "seed": seed,
            "params": {"per_instance_budget": per_instance_budget, "k": k, "swaps": swaps,
                       **limits.to_dict()}}


def build_contrastive_dataset(instances, count: int = 20, cutoff: Limits | None = None, seed: int = 0,
                              swaps: int = N_SWAPS, jobs: int = 1, fraction: float = FRACTION,
                              val_fraction: float = VAL_FRACTION, log=None) -> dict:
    cutoff = cutoff or Limits(node_limit=200)
    entries, skipped = [], []
    for idx, (name, inst) in enumerate(instances):
        coll = collect_configs(inst, count, cutoff, seed + 7919 * idx, swaps, jobs)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sets = contrast_sets(coll["records"], fraction)
        if sets is None:
            warnings.warn(f"{name}: no usable contrast, skipped", stacklevel=2)
            skipped.append(name)
            continue
        entries.append({"name": name, "graph": to_bipartite(inst), "collection": coll,
                        "positives": sets[0], "negatives": sets[1]})
        if log:
            log(f"{name}: {len(sets[0])} positives, {len(sets[1])} negatives")
    splits = split_names([e["name"] for e in entries], val_fraction, seed)
    for e in entries:
        e["split"] = splits[e["name"]]
    return {"kind": "contrast", "entries": entries, "skipped": skipped, "seed": seed,
            "params": {"count": count, "swaps": swaps, "fraction": fraction,
                       **cutoff.to_dict()}}


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def write_dataset(ds: dict, out_dir) -> Path:
    out = Path(out_dir)
    (out / "graphs").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    items, timings = [], {}
    for e in ds["entries"]:
        gpath = f"graphs/{e['name']}.json"
        lpath = f"labels/{e['name']}.json"
        (out / gpath).write_text(_dump(e["graph"].to_dict()))
        if ds["kind"] == "rank":
            cands = e["collection"]["candidates"]
            lab = {"sets": [c["members"] for c in cands], "pairs": e["pairs"].tolist(),
                   "collection": _strip_times(e["collection"])}
        else:
            lab = {"positives": e["positives"].tolist(), "negatives": e["negatives"].tolist(),
                   "collection": _strip_times(e["collection"])}
        (out / lpath).write_text(_dump(lab))
        timings[e["name"]] = _times(e["collection"])
        items.append({"name": e["name"], "split": e["split"], "graph": gpath, "labels": lpath})
    manifest = {"schema_version": DATASET_SCHEMA, "kind": ds["kind"], "seed": ds["seed"], "params": ds["params"],
                "instances": items, "skipped": ds["skipped"]}
    (out / "manifest.json").write_text(_dump(manifest))
    (out / "timings.json").write_text(_dump(timings))
    return out / "manifest.json"


def load_dataset(path) -> TrainData:
    p = Path(path)
    mpath = p / "manifest.json" if p.is_dir() else p
    root = mpath.parent
    man = json.loads(mpath.read_text())
    if man.get("schema_version") != DATASET_SCHEMA:
        raise GuidanceError(f"dataset schema {man.get('schema_version')} != {DATASET_SCHEMA}")
    train, val = [], []
    for it in man["instances"]:
        g = BipartiteGraph.from_dict(json.loads((root / it["graph"]).read_text()))
        lab = json.loads((root / it["labels"]).read_text())
        if man["kind"] == "rank":
            item = RankItem(g, [tuple(s) for s in lab["sets"]], np.array(lab["pairs"], dtype=np.int64).reshape(-1, 3),
                            it["name"])
        else:
            item = ContrastItem(g, np.array(lab["positives"]), np.array(lab["negatives"]), it["name"])
        (val if it["split"] == "validation" else train).append(item)
    names_t = {i.name for i in train}
    if any(i.name in names_t for i in val):
        raise GuidanceError("an instance appears in both splits")
    mode = "backdoor_score" if man["kind"] == "rank" else "config_logits"
    return TrainData(mode, train, val)


def to_train_data(ds: dict) -> TrainData:
    """In-memory equivalent of write_dataset + load_dataset."""
    train, val = [], []
    for e in ds["entries"]:
        if ds["kind"] == "rank":
            item = RankItem(e["graph"], [tuple(c["members"]) for c in e["collection"]["candidates"]], e["pairs"], e["name"])
        else:
            item = ContrastItem(e["graph"], e["positives"], e["negatives"], e["name"])
        (val if e["split"] == "validation" else train).append(item)
    return TrainData("backdoor_score" if ds["kind"] == "rank" else "config_logits", train, val)
