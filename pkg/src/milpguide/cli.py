"""Command-line entry point: ``milpguide <subcommand> ...``.

Exit codes: 0 success, 1 domain error, 2 usage error. Every run writes a
``*.manifest.json`` next to its main output.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, stl
from .bnb.config import BranchPriority, Limits, SolverConfig
from .bnb.solver import solve
from .encode.cpp_encoder import CppProblem, cpp_from_dict, empirical_satisfaction, encode_cpp, sample_robustness
from .encode.stl_encoder import (EncodingContext, controls_from_solution, encode_problem, problem_from_dict,
                                 trajectory_from_solution)
from .features import SCHEMA_VERSION as GRAPH_SCHEMA
from .generators import generate, manifest as gen_manifest, parse_param_string, problem_bytes
from .guidance.backdoor import infer_backdoor, random_backdoor
from .guidance.configs import infer_config
from .guidance.dataset import (DATASET_SCHEMA, build_contrastive_dataset, build_rank_dataset, load_dataset,
                               write_dataset)
from .harness.experiment import load_records, run_experiment, write_summary_csv
from .harness.metrics import summarize
from .milp.instance import load_json, save_json
from .milp.mps import export_mps, import_instance
from .neural.train import CHECKPOINT_SCHEMA, Hyper, load_checkpoint, params_digest, save_checkpoint, train

OUT_ENV = "MILPGUIDE_OUT_DIR"


class DomainError(Exception):
    pass


# --- helpers -----------------------------------------------------------------------------------

def _out(path) -> Path:
    p = Path(path)
    base = os.environ.get(OUT_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _sha(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for f in sorted(path.rglob("*")):
            if f.is_file() and not f.name.endswith(".manifest.json") and f.name != "timings.json":
                h.update(str(f.relative_to(path)).encode())
                h.update(f.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def _params(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func",) and not callable(v)}


def write_manifest(args, outputs: list, inputs: list = (), extra: dict | None = None, t0: float | None = None) -> Path:
    outs = [Path(o) for o in outputs]
    main = outs[0]
    man = {
        "command": args.command,
        "parameters": _params(args),
        "seeds": {k: v for k, v in _params(args).items() if "seed" in k},
        "schema_versions": {"graph": GRAPH_SCHEMA, "dataset": DATASET_SCHEMA, "checkpoint": CHECKPOINT_SCHEMA},
        "version": __version__,
        "inputs": {str(p): _sha(Path(p)) for p in inputs if Path(p).exists()},
        "artifacts": {str(p): _sha(p) for p in outs if p.exists()},
        "timestamps": {"start": t0, "end": time.time()},
    }
    man.update(extra or {})
    mp = main.parent / (main.name + ".manifest.json") if not main.is_dir() else main / "run.manifest.json"
    mp.write_text(json.dumps(man, indent=1, sort_keys=True, default=str))
    return mp


def load_problem(path):
    d = json.loads(Path(path).read_text())
    return cpp_from_dict(d) if d.get("kind") == "cpp" else problem_from_dict(d)


def load_instance(path):
    if not Path(path).exists():
        raise DomainError(f"file not found: {path}")
    return import_instance(path)


def _limits(args) -> Limits:
    return Limits(args.time_limit if args.time_limit else math.inf, args.node_limit)


def _instances(paths):
    return [(Path(p).name.split(".")[0], load_instance(p)) for p in paths]


# --- subcommands -------------------------------------------------------------------------------

def cmd_gen(args):
    params = parse_param_string(args.params, args.seed, args.delta)
    prob = generate(params)
    out = _out(args.out)
    out.write_bytes(problem_bytes(prob))
    man = gen_manifest(params, prob)
    print(man["sha256"])
    return [out], [], {"generator_manifest": man}


def cmd_encode(args):
    prob = load_problem(args.problem)
    ctx = EncodingContext(big_M=args.big_m, rho_min=args.rho_min)
    inst = encode_cpp(prob, ctx) if isinstance(prob, CppProblem) else encode_problem(prob, ctx)
    out = _out(args.out)
    if out.suffix == ".mps":
        export_mps(inst, out)
    else:
        save_json(inst, out)
    c = inst.counts()
    print(json.dumps(c))
    return [out], [args.problem], {"counts": c}


def _read_priorities(path):
    if not path:
        return None
    d = json.loads(Path(path).read_text())
    vals = d.get("priorities", d)
    return BranchPriority({int(k): int(v) for k, v in vals.items()})


def _read_config(path):
    if not path:
        return SolverConfig()
    d = json.loads(Path(path).read_text())
    return SolverConfig.from_dict(d.get("config", d))


def cmd_solve(args):
    inst = load_instance(args.instance)
    res = solve(inst, _read_config(args.config), _read_priorities(args.priorities), _limits(args),
                search_log=args.search_log or False)
    out = _out(args.out)
    d = res.to_dict()
    out.write_text(json.dumps(d, sort_keys=True))
    print(json.dumps({k: d[k] for k in ("status", "objective", "node_count", "lp_iterations")}))
    return [out], [args.instance, args.priorities, args.config], {}


def cmd_robustness(args):
    prob = load_problem(args.problem)
    inst = load_instance(args.instance)
    sol = json.loads(Path(args.result).read_text())
    if sol.get("x") is None:
        raise DomainError("result has no solution vector")
    x = np.array(sol["x"])
    if isinstance(prob, CppProblem):
        U = controls_from_solution(inst, x)
        rho = sample_robustness(prob, U)
        rep = {"kind": "cpp", "sample_robustness": rho.tolist(), "satisfied": int(np.sum(rho >= -args.tol)),
               "q": prob.q, "K": prob.K,
               "empirical_satisfaction": empirical_satisfaction(prob, U, args.fresh, args.fresh_seed)}
    else:
        X = trajectory_from_solution(inst, x)
        r = stl.robustness(prob.spec, X, 0)
        rep = {"kind": "stl", "robustness": r, "satisfied": bool(r >= -args.tol)}
    out = _out(args.out)
    out.write_text(json.dumps(rep, sort_keys=True))
    print(json.dumps(rep))
    return [out], [args.problem, args.instance, args.result], {}


def cmd_collect_backdoors(args):
    ds = build_rank_dataset(_instances(args.instances), args.budget, Limits(node_limit=args.node_limit),
                            args.seed, args.k, args.swaps, args.jobs, log=lambda m: print(m, file=sys.stderr))
    if not ds["entries"]:
        raise DomainError("no instance produced a usable ranking")
    out = _out(args.out)
    write_dataset(ds, out)
    return [out], args.instances, {"skipped": ds["skipped"]}


def cmd_collect_configs(args):
    ds = build_contrastive_dataset(_instances(args.instances), args.count, Limits(node_limit=args.node_limit),
                                   args.seed, args.swaps, args.jobs, log=lambda m: print(m, file=sys.stderr))
    if not ds["entries"]:
        raise DomainError("no instance produced a usable contrast")
    out = _out(args.out)
    write_dataset(ds, out)
    return [out], args.instances, {"skipped": ds["skipped"]}


def cmd_train(args):
    data = load_dataset(args.dataset)
    hyper = Hyper(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed, L=args.L, H=args.H)
    model, hist = train(data, hyper, log=(lambda m: print(m, file=sys.stderr)) if args.verbose else None)
    out = _out(args.out)
    save_checkpoint(model, out, {"history": hist})
    digest = params_digest(model)
    print(json.dumps({"best_epoch": hist["best_epoch"], "params_sha256": digest}))
    return [out], [args.dataset], {"params_sha256": digest}


def cmd_infer(args):
    model = load_checkpoint(args.checkpoint)
    inst = load_instance(args.instance)
    if model.mode == "backdoor_score":
        prio, members, scores = infer_backdoor(model, inst, args.count, seed=args.seed)
        rep = {"priorities": {str(k): v for k, v in prio.values.items()}, "members": list(members),
               "scores": scores.tolist()}
    else:
        rep = {"config": infer_config(model, inst).to_dict()}
    out = _out(args.out)
    out.write_text(json.dumps(rep, sort_keys=True))
    print(json.dumps({k: v for k, v in rep.items() if k != "scores"}))
    return [out], [args.checkpoint, args.instance], {}


def evaluation_methods(backdoor_model=None, config_model=None, random_baseline=False, count=50, seed=0):
    methods = {"default": lambda n, i: (SolverConfig(), None)}
    if backdoor_model is not None:
        methods["backdoor_rank"] = lambda n, i: (SolverConfig(), infer_backdoor(backdoor_model, i, count, seed=seed)[0])
    if random_baseline:
        methods["random_backdoor"] = lambda n, i: (SolverConfig(), random_backdoor(i, count, seed=seed, pick_seed=seed)[0])
    if config_model is not None:
        methods["config_cl"] = lambda n, i: (infer_config(config_model, i), None)
    return methods


def cmd_evaluate(args):
    bm = load_checkpoint(args.backdoor_model) if args.backdoor_model else None
    cm = load_checkpoint(args.config_model) if args.config_model else None
    methods = evaluation_methods(bm, cm, args.random_baseline, args.count, args.seed)
    if len(methods) < 2:
        raise DomainError("nothing to compare: give --backdoor-model, --config-model or --random-baseline")
    metric = args.metric or ("primal_gap" if cm is not None and bm is None else "node_count")
    out = _out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, summary = run_experiment(args.benchmark, _instances(args.instances), methods, _limits(args), out, metric,
                                args.jobs)
    for s in summary.stats:
        print(f"{s.method}: wins {s.wins} mean {s.mean:.4g} median {s.median:.4g} ({s.improvement_pct:.1f}%)")
    return [out], list(args.instances) + [p for p in (args.backdoor_model, args.config_model) if p], {}


def cmd_report(args):
    recs = load_records(args.run_dir)
    if not recs:
        raise DomainError(f"no records found under {args.run_dir}")
    rep_path = Path(args.run_dir) / "report.json"
    meta = json.loads(rep_path.read_text()) if rep_path.exists() else {}
    metric = args.metric or meta.get("metric", "node_count")
    bad = {r["instance"] for r in recs if r["status"] in ("error", "infeasible", "unbounded")}
    rows = [dict(r, **({metric: None} if r["instance"] in bad else {})) for r in recs]
    summary = summarize(rows, metric, meta.get("benchmark", ""))
    out = _out(args.out) if args.out else None
    if args.format == "csv":
        target = out or _out(Path(args.run_dir) / "report_summary.csv")
        write_summary_csv(summary, target)
        sys.stdout.write(target.read_text())
        outputs = [target]
    else:
        d = {"benchmark": summary.benchmark, "metric": metric, "ties": summary.ties, "excluded": summary.excluded,
             "stats": [vars(s) for s in summary.stats]}
        text = json.dumps(d, indent=1, sort_keys=True)
        target = out or _out(Path(args.run_dir) / "report_summary.json")
        target.write_text(text)
        print(text)
        outputs = [target]
    return outputs, [args.run_dir], {}


def cmd_pipeline(args):
    """gen -> encode -> collect-backdoors -> train -> evaluate at a reduced budget."""
    root = _out(Path(args.out) / "x").parent
    inst_paths = {"train": [], "test": []}
    for split, n, base in (("train", args.train, args.seed), ("test", args.test, args.seed + 10_000)):
        for i in range(n):
            s = base + i
            prob = generate(parse_param_string(args.family, s))
            pdir = root / "problems"
            pdir.mkdir(parents=True, exist_ok=True)
            (pdir / f"{split}{s}.json").write_bytes(problem_bytes(prob))
            inst = encode_cpp(prob) if isinstance(prob, CppProblem) else encode_problem(prob)
            ip = root / "instances" / f"{split}{s}.milp.json"
            ip.parent.mkdir(parents=True, exist_ok=True)
            save_json(inst, ip)
            inst_paths[split].append(str(ip))
    ds = build_rank_dataset(_instances(inst_paths["train"]), args.budget, Limits(node_limit=args.node_limit),
                            args.seed, swaps=args.swaps, jobs=args.jobs)
    write_dataset(ds, root / "dataset")
    model, hist = train(load_dataset(root / "dataset"),
                        Hyper(epochs=args.epochs, lr=args.lr, seed=args.seed, L=args.L, H=args.H))
    save_checkpoint(model, root / "model.json", {"history": hist})
    methods = evaluation_methods(model, None, True, 50, args.seed)
    _, summary = run_experiment(args.family, _instances(inst_paths["test"]), methods,
                                Limits(node_limit=args.eval_node_limit), root / "eval", "node_count", args.jobs)
    for s in summary.stats:
        print(f"{s.method}: median nodes {s.median:.4g}, mean {s.mean:.4g}")
    return [root], [], {"params_sha256": params_digest(model)}


def cmd_rerun(args):
    man = json.loads(Path(args.manifest).read_text())
    params = dict(man["parameters"])
    if args.out:
        params["out"] = args.out
    ns = argparse.Namespace(**params)
    ns.func = COMMANDS[man["command"]]
    return _dispatch(ns)


COMMANDS = {
    "gen": cmd_gen, "encode": cmd_encode, "solve": cmd_solve, "robustness": cmd_robustness,
    "collect-backdoors": cmd_collect_backdoors, "collect-configs": cmd_collect_configs, "train": cmd_train,
    "infer": cmd_infer, "evaluate": cmd_evaluate, "report": cmd_report, "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="milpguide", description="STL/CPP planning MILPs, branch and bound, learned guidance")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def limits(p, node_limit=None):
        p.add_argument("--time-limit", type=float, default=None)
        p.add_argument("--node-limit", type=int, default=node_limit)

    p = sub.add_parser("gen", help="generate a benchmark problem")
    p.add_argument("params", help="stl:N_o,N_c,N_t,T or cpp:K,T")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--out", default="problem.json")

    p = sub.add_parser("encode", help="encode a problem file as a MILP (.json or .mps)")
    p.add_argument("problem")
    p.add_argument("--out", default="instance.milp.json")
    p.add_argument("--rho-min", type=float, default=0.0)
    p.add_argument("--big-m", type=float, default=None)

    p = sub.add_parser("solve", help="branch and bound on a MILP file")
    p.add_argument("instance")
    p.add_argument("--priorities")
    p.add_argument("--config")
    limits(p)
    p.add_argument("--search-log")
    p.add_argument("--out", default="result.json")

    p = sub.add_parser("robustness", help="check a solution against its STL formula")
    p.add_argument("problem")
    p.add_argument("instance")
    p.add_argument("result")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--fresh", type=int, default=500)
    p.add_argument("--fresh-seed", type=int, default=12345)
    p.add_argument("--out", default="robustness.json")

    p = sub.add_parser("collect-backdoors", help="label backdoor candidates and build a ranking dataset")
    p.add_argument("instances", nargs="+")
    p.add_argument("--budget", type=int, default=30)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--swaps", type=int, default=10)
    p.add_argument("--node-limit", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="backdoor_data")

    p = sub.add_parser("collect-configs", help="label sampled configurations and build a contrastive dataset")
    p.add_argument("instances", nargs="+")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--swaps", type=int, default=10)
    p.add_argument("--node-limit", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="config_data")

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("dataset")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--L", type=int, default=64)
    p.add_argument("--H", type=int, default=8)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", default="model.json")

    p = sub.add_parser("infer", help="priorities or configuration from a trained model")
    p.add_argument("checkpoint")
    p.add_argument("instance")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="guidance.json")

    p = sub.add_parser("evaluate", help="compare guided solving against the default")
    p.add_argument("instances", nargs="+")
    p.add_argument("--backdoor-model")
    p.add_argument("--config-model")
    p.add_argument("--random-baseline", action="store_true")
    p.add_argument("--benchmark", default="bench")
    p.add_argument("--metric", default=None)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    limits(p)
    p.add_argument("--out", default="runs")

    p = sub.add_parser("report", help="summarize an evaluation directory")
    p.add_argument("run_dir")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--metric", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("pipeline", help="gen -> encode -> collect -> train -> evaluate (small budget)")
    p.add_argument("--family", default="stl:1,1,2,4")
    p.add_argument("--train", type=int, default=4)
    p.add_argument("--test", type=int, default=3)
    p.add_argument("--budget", type=int, default=30)
    p.add_argument("--swaps", type=int, default=0)
    p.add_argument("--node-limit", type=int, default=300)
    p.add_argument("--eval-node-limit", type=int, default=2000)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--L", type=int, default=16)
    p.add_argument("--H", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="pipeline")

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="alternative output path")

    for name, p in sub.choices.items():
        p.set_defaults(func=COMMANDS.get(name, cmd_rerun))
    return ap


def _dispatch(args) -> int:
    t0 = time.time()
    outputs, inputs, extra = args.func(args)
    write_manifest(args, outputs, [i for i in inputs if i], extra, t0)
    return 0


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)   # usage errors exit with status 2
    try:
        if args.func is cmd_rerun:
            return cmd_rerun(args)
        return _dispatch(args)
    except (DomainError, ValueError, RuntimeError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"milpguide {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
