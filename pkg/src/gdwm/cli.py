"""Scriptable entry point: pretrain, gen, adapt, diagnose, sweep.

Every subcommand is deterministic under (config, seed), echoes its effective
configuration into a manifest, and writes plot-ready CSV / JSON artifacts.
Config files are JSON; command-line flags override file values.

Exit codes: 2 usage error, 1 runtime failure, 3 failed --check assertion.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import os
import sys
import time
from typing import Dict, List, Optional

import numpy as np

from . import diagnostics, worlds
from .allocator import AllocatorConfig, uniform_schedule
from .consolidate import (
    AdaptationReport,
    ConsolidationConfig,
    run_gdwm,
    run_uniform_baseline,
)
from .corpus import TokenSequence, load_corpus, partition
from .errors import GdwmError
from .model import FrozenModel, file_digest, load_model, save_adapters, save_model
from .pretrain import PretrainConfig, pretrain_base
from .synthtasks import SyntheticTaskSpec, TaskInstance, eval_task, generate
from .utility import delta_rows, utility_rows

SCHEMA_VERSION = 1
ENV_OUTDIR = "GDWM_OUTDIR"

# paper-scale controller defaults; --desk-scale switches to the small profile
DEFAULTS = {
    "chunk_size": 1024,
    "window": 512,
    "tau": 1.0,
    "k_min": 1,
    "k_total": 32,
    "batch_size": 32,
    "lr": 1e-4,
    "rank": 16,
    "alpha": 32.0,
    "length": 4096,
    "span": 1024,
    "hops": 2,
    "segments": 8,
    "seed": 0,
    "gate": "abs",
    "policy": "gdwm",
    "steps": 900,
    "greedy": False,
}

DESK_PROFILE = {"chunk_size": 128, "window": 64, "length": 4096, "rank": 4, "alpha": 8.0}


class CheckFailure(Exception):
    """A --check assertion did not hold."""


def _out_dir(args, command: str) -> str:
    out = args.out or os.environ.get(ENV_OUTDIR) or os.path.join("runs", command)
    os.makedirs(out, exist_ok=True)
    return out


def _effective_config(args, keys: List[str]) -> Dict:
    """defaults <- config file <- explicit flags."""
    cfg = {k: DEFAULTS[k] for k in keys if k in DEFAULTS}
    if getattr(args, "desk_scale", False):
        cfg.update({k: v for k, v in DESK_PROFILE.items() if k in keys})
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        cfg.update({k: v for k, v in file_cfg.items() if k in keys})
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _write_csv(path: str, header: List[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: str, payload: dict) -> None:
    payload = dict(payload, schema_version=SCHEMA_VERSION)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=_jsonify)


def _jsonify(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _manifest(out: str, command: str, config: dict, inputs: List[str],
              outputs: List[str], seed: int) -> None:
    digests = {p: file_digest(p) for p in inputs if p and os.path.isfile(p)}
    _write_json(os.path.join(out, "manifest.json"), {
        "command": command,
        "config": config,
        "input_digests": digests,
        "outputs": sorted(outputs),
        "seed": seed,
    })


def _gnuplot_script(out: str, csv_name: str, ycol: int, title: str) -> str:
    path = os.path.join(out, "plot.gp")
    with open(path, "w") as fh:
        fh.write(
            f'set datafile separator ","\nset key autotitle columnhead\n'
            f'set title "{title}"\nplot "{csv_name}" using 1:{ycol} with lines\n'
        )
    return path


# ---------------------------------------------------------------------------
# pretrain
# ---------------------------------------------------------------------------

def cmd_pretrain(args) -> int:
    out = _out_dir(args, "pretrain")
    cfg = _effective_config(args, ["seed", "steps", "batch_size", "lr"])
    corpus_arg = args.corpus or "synthetic"
    if corpus_arg == "synthetic":
        world = worlds.build_world()
        stream = worlds.stream_sequences(world, worlds.StreamConfig(), seed=cfg["seed"])
    else:
        if not os.path.isfile(corpus_arg):
            print(f"error: corpus path {corpus_arg!r} does not exist", file=sys.stderr)
            return 2
        seq = load_corpus(corpus_arg, limit=1 << 30)
        stream = _windows(seq, width=512)
    pt_cfg = PretrainConfig(steps=cfg["steps"], batch_size=cfg["batch_size"], lr=cfg["lr"])
    result = pretrain_base(stream, pt_cfg, seed=cfg["seed"])
    ckpt = os.path.join(out, "model.npz")
    save_model(result.model, ckpt)
    curve = os.path.join(out, "curve.csv")
    _write_csv(curve, ["step", "loss"], list(enumerate(result.loss_history, 1)))
    _write_json(os.path.join(out, "pretrain.json"), {
        "final_nll": result.final_nll,
        "config": pt_cfg.to_dict(),
        "checkpoint": ckpt,
        "checkpoint_sha256": file_digest(ckpt),
    })
    outputs = [ckpt, curve, os.path.join(out, "pretrain.json")]
    if args.gnuplot_script:
        outputs.append(_gnuplot_script(out, "curve.csv", 2, "training NLL"))
    _manifest(out, "pretrain", cfg, [args.config, None if corpus_arg == "synthetic" else corpus_arg],
              outputs, cfg["seed"])
    print(f"final NLL {result.final_nll:.4f}  ->  {ckpt}")
    return 0


def _windows(seq: TokenSequence, width: int):
    toks = np.asarray(seq.tokens)
    for s in range(0, len(toks) - width + 1, width):
        yield TokenSequence(toks[s:s + width])


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    out = _out_dir(args, "gen")
    cfg = _effective_config(args, ["length", "span", "hops", "segments", "seed"])
    spec = SyntheticTaskSpec(kind=args.kind.replace("-", "_"), length=cfg["length"],
                             span=cfg["span"], hops=cfg["hops"], segments=cfg["segments"],
                             seed=cfg["seed"])
    instance = generate(spec)
    instance.save(out)
    outputs = [os.path.join(out, "sequence.bin"), os.path.join(out, "instance.json")]
    _manifest(out, "gen", dict(cfg, kind=spec.kind), [args.config], outputs, cfg["seed"])
    print(f"{spec.kind} instance (L={instance.sequence.length}, "
          f"{len(instance.query_positions)} query positions) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# adapt
# ---------------------------------------------------------------------------

def _load_adapt_input(args):
    if args.instance:
        inst = TaskInstance.load(args.instance)
        return inst.sequence, inst
    if args.corpus:
        return load_corpus(args.corpus, limit=1 << 30), None
    raise GdwmError("adapt requires --instance or --corpus")


def _run_policy(model: FrozenModel, seq: TokenSequence, policy: str, cfg: dict,
                seed: int, adapt_length: Optional[int]) -> AdaptationReport:
    cons = ConsolidationConfig(batch_size=cfg["batch_size"], lr=cfg["lr"],
                               adapter_rank=cfg["rank"], adapter_alpha=cfg["alpha"],
                               seed=seed)
    if policy == "uniform":
        return run_uniform_baseline(model, seq, cfg["k_total"], cons,
                                    adapt_length=adapt_length)
    alloc = AllocatorConfig(k_total=cfg["k_total"], k_min=cfg["k_min"],
                            tau=cfg["tau"], greedy=(policy == "greedy"))
    gate = {"gdwm": cfg["gate"], "greedy": cfg["gate"], "surprisal": "surprisal",
            "uniform-gate": "uniform"}[policy]
    report = run_gdwm(model, seq, cfg["chunk_size"], cfg["window"], gate, alloc, cons,
                      adapt_length=adapt_length)
    report.policy = policy
    return report


def cmd_adapt(args) -> int:
    out = _out_dir(args, "adapt")
    keys = ["chunk_size", "window", "tau", "k_min", "k_total", "batch_size",
            "lr", "rank", "alpha", "seed", "gate", "policy"]
    cfg = _effective_config(args, keys)
    model = load_model(args.model)
    seq, instance = _load_adapt_input(args)
    adapt_length = instance.adapt_length if instance is not None else None
    t0 = time.perf_counter()
    report = _run_policy(model, seq, cfg["policy"], cfg, cfg["seed"], adapt_length)
    wall = time.perf_counter() - t0

    outputs = []
    trace_csv = os.path.join(out, "trace.csv")
    _write_csv(trace_csv, ["step", "chunk", "loss", "grad_norm"],
               [r.as_tuple() for r in report.trace])
    outputs.append(trace_csv)
    adapters = os.path.join(out, "adapters.npz")
    if report.fast is not None:
        save_adapters(report.fast, adapters)
        outputs.append(adapters)
    if report.schedule is not None:
        sched_json = os.path.join(out, "schedule.json")
        _write_json(sched_json, report.schedule.to_dict())
        outputs.append(sched_json)
    if report.utility is not None:
        upath = os.path.join(out, "utility.csv")
        _write_csv(upath, ["chunk", "utility", "evaluated_positions"],
                   utility_rows(report.utility))
        dpath = os.path.join(out, "delta.csv")
        _write_csv(dpath, ["position", "delta"], delta_rows(report.utility))
        outputs += [upath, dpath]
    if args.partition_manifest:
        ppath = os.path.join(out, "partition.csv")
        adapt_seq = seq if adapt_length is None else \
            TokenSequence(np.asarray(seq.tokens)[:adapt_length])
        _write_csv(ppath, ["chunk", "start", "end"],
                   partition(adapt_seq, cfg["chunk_size"]).manifest_rows())
        outputs.append(ppath)
    payload = {
        "policy": report.policy,
        "config": cfg,
        "steps": report.steps,
        "time_breakdown": dict(report.time_breakdown(), wall_s=wall),
        "utility_share": (report.utility_s / report.total_s) if report.total_s else 0.0,
        "adapter_checkpoint": adapters if report.fast is not None else None,
        "schedule": report.schedule.to_dict() if report.schedule else None,
    }
    if instance is not None:
        ev = eval_task(model, report.fast, instance)
        payload["eval"] = ev.to_dict()
    report_json = os.path.join(out, "report.json")
    _write_json(report_json, payload)
    outputs.append(report_json)
    if args.gnuplot_script:
        outputs.append(_gnuplot_script(out, "trace.csv", 3, "consolidation loss"))
    _manifest(out, "adapt", cfg, [args.model, args.config, args.corpus,
                                  args.instance and os.path.join(args.instance, "sequence.bin")],
              outputs, cfg["seed"])
    print(f"{report.policy}: {report.steps} steps, "
          f"utility share {payload['utility_share']:.1%} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------

def _read_trace_column(path: str, column: str) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r[column]) for r in rows])


def cmd_diagnose(args) -> int:
    out = _out_dir(args, "diagnose")
    outputs = []
    seed = args.seed if args.seed is not None else DEFAULTS["seed"]
    if args.mode == "variance":
        a = _read_trace_column(args.trace_a, "grad_norm")
        b = _read_trace_column(args.trace_b, "grad_norm")
        cmp = diagnostics.prediction_gradient_norm_variance(a, b)
        path = os.path.join(out, "variance.json")
        _write_json(path, dataclasses.asdict(cmp))
        outputs.append(path)
        print(f"grad-norm variance ratio a/b = {cmp.ratio:.4f}")
        if args.check and not cmp.ratio < 1.0:
            raise CheckFailure(f"expected ratio < 1, got {cmp.ratio:.4f}")
    elif args.mode == "synergy":
        if args.table in ("xor", "independent", "redundant"):
            table = diagnostics.builtin_table(args.table)
        else:
            table = np.asarray(json.load(open(args.table)), dtype=np.float64)
        rep = diagnostics.synergy_gap(table)
        path = os.path.join(out, "synergy.json")
        _write_json(path, rep.to_dict())
        outputs.append(path)
        print(f"fragmentation gap = {rep.fragmentation_gap:+.6f} bits "
              f"(interaction {rep.interaction_information:+.6f})")
        if args.check and rep.identity_residual > 1e-10:
            raise CheckFailure(f"identity residual {rep.identity_residual:.2e} > 1e-10")
    elif args.mode == "fragment-sweep":
        cfg = _effective_config(args, ["window", "tau", "k_min", "k_total",
                                       "batch_size", "lr", "rank", "alpha",
                                       "length", "span", "hops", "seed"])
        model = load_model(args.model)
        spec = SyntheticTaskSpec(kind="multihop", length=cfg["length"], span=cfg["span"],
                                 hops=cfg["hops"], seed=cfg["seed"])
        sizes = [int(s) for s in args.chunk_sizes.split(",")]
        seeds = list(range(cfg["seed"], cfg["seed"] + args.n_seeds))
        rows = diagnostics.fragmentation_sweep(
            model, spec, sizes, cfg["window"],
            AllocatorConfig(k_total=cfg["k_total"], k_min=cfg["k_min"], tau=cfg["tau"]),
            ConsolidationConfig(batch_size=cfg["batch_size"], lr=cfg["lr"],
                                adapter_rank=cfg["rank"], adapter_alpha=cfg["alpha"]),
            seeds)
        path = os.path.join(out, "fragment_sweep.csv")
        _write_csv(path, ["S", "seed", "nll_before", "nll_after", "evidence_rank"],
                   [r.as_tuple() for r in rows])
        outputs.append(path)
        print(f"{len(rows)} rows -> {path}")
    _manifest(out, f"diagnose:{args.mode}", vars_without(args, {"func"}),
              [getattr(args, "model", None), getattr(args, "trace_a", None),
               getattr(args, "trace_b", None)], outputs, seed)
    return 0


def vars_without(args, drop) -> dict:
    return {k: v for k, v in vars(args).items() if k not in drop and not callable(v)}


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

ABLATION_CELLS = [
    # the four budget-matched configurations of the component ablation
    {"name": "full", "policy": "gdwm"},
    {"name": "uniform_gate", "policy": "uniform-gate"},
    {"name": "no_coverage", "policy": "gdwm", "k_min": 0},
    {"name": "no_chunking", "policy": "uniform"},
]


def _sweep_cells(args, cfg) -> List[dict]:
    if args.preset == "ablation":
        return [dict(cell) for cell in ABLATION_CELLS]
    if not args.grid:
        return [{"name": "cell0"}]
    grid = json.load(open(args.grid))
    axes = {k: v for k, v in grid.items() if isinstance(v, list) and v}
    fixed = {k: v for k, v in grid.items() if not isinstance(v, list)}
    names = sorted(axes)
    cells = []
    for combo in itertools.product(*(axes[k] for k in names)):
        cell = dict(fixed)
        cell.update(dict(zip(names, combo)))
        cell["name"] = ",".join(f"{k}={v}" for k, v in zip(names, combo)) or "cell0"
        cells.append(cell)
    return cells


def cmd_sweep(args) -> int:
    out = _out_dir(args, "sweep")
    keys = ["chunk_size", "window", "tau", "k_min", "k_total", "batch_size",
            "lr", "rank", "alpha", "seed", "gate", "policy",
            "length", "span", "hops"]
    cfg = _effective_config(args, keys)
    model = load_model(args.model)
    cells = _sweep_cells(args, cfg)
    master = np.random.SeedSequence(cfg["seed"])
    seeds = [int(s.generate_state(1)[0] % (1 << 31)) for s in master.spawn(args.n_seeds)]
    rows = []
    for cell in cells:
        cell_cfg = dict(cfg)
        cell_cfg.update({k: v for k, v in cell.items() if k != "name"})
        for seed in seeds:
            spec = SyntheticTaskSpec(kind=args.task.replace("-", "_"),
                                     length=cell_cfg["length"], span=cell_cfg["span"],
                                     hops=cell_cfg["hops"], seed=seed)
            try:
                inst = generate(spec)
                report = _run_policy(model, inst.sequence, cell_cfg["policy"], cell_cfg,
                                     seed, inst.adapt_length)
                ev = eval_task(model, report.fast, inst)
                rows.append((cell["name"], seed, "ok", report.steps,
                             ev.nll_before, ev.nll_after, ev.accuracy_after))
            except Exception as exc:  # a failed cell is recorded, not fatal
                rows.append((cell["name"], seed, f"error:{type(exc).__name__}",
                             0, "", "", ""))
    path = os.path.join(out, "sweep.csv")
    _write_csv(path, ["cell", "seed", "status", "steps",
                      "nll_before", "nll_after", "accuracy_after"], rows)
    _manifest(out, "sweep", dict(cfg, cells=[c["name"] for c in cells]),
              [args.model, args.grid, args.config], [path], cfg["seed"])
    print(f"{len(rows)} rows ({len(cells)} cells x {len(seeds)} seeds) -> {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gdwm", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, config=True):
        sp.add_argument("--out", help=f"output directory (default ${ENV_OUTDIR} or ./runs/<cmd>)")
        sp.add_argument("--seed", type=int)
        if config:
            sp.add_argument("--config", help="JSON config file; flags override its values")
        sp.add_argument("--desk-scale", action="store_true",
                        help="small-profile overrides: chunk 128, window 64, rank 4")

    sp = sub.add_parser("pretrain", help="train a base model from scratch")
    common(sp)
    sp.add_argument("--corpus", help="byte file, or 'synthetic' (default)")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--gnuplot-script", action="store_true")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("gen", help="generate a synthetic task instance")
    common(sp)
    sp.add_argument("--kind", required=True,
                    choices=["needle", "multihop", "heterogeneous", "noise-mix"])
    sp.add_argument("--length", type=int)
    sp.add_argument("--span", type=int)
    sp.add_argument("--hops", type=int)
    sp.add_argument("--segments", type=int)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("adapt", help="run one adaptation policy")
    common(sp)
    sp.add_argument("--model", required=True, help="model checkpoint (.npz)")
    sp.add_argument("--instance", help="generated task directory")
    sp.add_argument("--corpus", help="raw byte file")
    sp.add_argument("--policy", choices=["gdwm", "uniform", "greedy", "surprisal",
                                         "uniform-gate"])
    sp.add_argument("--gate", choices=["abs", "positive_part", "surprisal"])
    sp.add_argument("--chunk-size", dest="chunk_size", type=int)
    sp.add_argument("--window", type=int)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--k-min", dest="k_min", type=int)
    sp.add_argument("--k-total", dest="k_total", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--rank", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--partition-manifest", action="store_true",
                    help="also write the chunk,start,end CSV")
    sp.add_argument("--gnuplot-script", action="store_true")
    sp.set_defaults(func=cmd_adapt)

    sp = sub.add_parser("diagnose", help="theory checks and sweeps")
    common(sp)
    sp.add_argument("mode", choices=["variance", "synergy", "fragment-sweep"])
    sp.add_argument("--trace-a", help="trace CSV (variance mode)")
    sp.add_argument("--trace-b", help="trace CSV (variance mode)")
    sp.add_argument("--table", default="xor",
                    help="builtin name (xor|independent|redundant) or JSON file")
    sp.add_argument("--model", help="model checkpoint (fragment-sweep)")
    sp.add_argument("--chunk-sizes", default="256,1024")
    sp.add_argument("--n-seeds", dest="n_seeds", type=int, default=3)
    sp.add_argument("--window", type=int)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--k-min", dest="k_min", type=int)
    sp.add_argument("--k-total", dest="k_total", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--rank", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--length", type=int)
    sp.add_argument("--span", type=int)
    sp.add_argument("--hops", type=int)
    sp.add_argument("--check", action="store_true",
                    help="exit 3 unless the expected relation holds")
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("sweep", help="grid of runs, aggregated to one CSV")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--task", default="multihop",
                    choices=["needle", "multihop", "noise-mix"])
    sp.add_argument("--grid", help="JSON grid: lists are swept, scalars fixed")
    sp.add_argument("--preset", choices=["ablation"])
    sp.add_argument("--n-seeds", dest="n_seeds", type=int, default=3)
    sp.add_argument("--chunk-size", dest="chunk_size", type=int)
    sp.add_argument("--window", type=int)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--k-min", dest="k_min", type=int)
    sp.add_argument("--k-total", dest="k_total", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--rank", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--length", type=int)
    sp.add_argument("--span", type=int)
    sp.add_argument("--hops", type=int)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 3
    except (GdwmError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
