"""Command-line entry point: ``nbsp run | metrics | plot | sweep | identify``.

Exit codes: 0 success, 2 configuration or usage error, 3 run failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import uuid
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from nbsp import envs, plots
from nbsp.config import ExperimentConfig, preset
from nbsp.errors import ConfigError
from nbsp.harness import proportion_sweep, read_sr_csv, run_cycling_experiment
from nbsp.mechanism import build_mask
from nbsp.metrics import MetricSummary, mean_std
from nbsp.sac import SacAgent
from nbsp.skill_neurons import (NeuronId, collect_trace, identify, read_gpm_csv, read_neuron_series,
                                write_trace_csv)

EXIT_OK, EXIT_CONFIG, EXIT_RUN, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "NBSP_OUT"

log = logging.getLogger("nbsp")


class UsageError(Exception):
    pass


def _load_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("pass either --config or --preset, not both")
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        cfg = ExperimentConfig().validate()
    seeds = None
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if args.seed is not None:
        seeds = [args.seed]
    return cfg.with_overrides(method=args.method, experiment__seeds=seeds, nbsp__proportion=args.proportion,
                              nbsp__alpha_mask=args.alpha_mask, nbsp__replay_interval=args.replay_interval)


def _out_root(args) -> Path:
    return Path(os.environ.get(OUT_ENV) or args.out or "runs")


def _run_one(payload):
    toml, seed, run_dir = payload
    cfg = ExperimentConfig.from_toml(toml)
    art = run_cycling_experiment(cfg, seed, run_dir)
    return seed, art.complete, art.metrics


def cmd_run(args) -> int:
    cfg = _load_config(args)
    root = _out_root(args)
    run_id = args.run_id or f"{cfg.experiment.method}-{cfg.hash()}-{uuid.uuid4().hex[:6]}"
    run_root = root / run_id
    if run_root.exists() and any(run_root.iterdir()):
        print(f"error: run directory {run_root} already exists", file=sys.stderr)
        return EXIT_IO
    run_root.mkdir(parents=True, exist_ok=True)
    (run_root / "config.snapshot").write_text(cfg.to_toml())
    payloads = [(cfg.to_toml(), seed, str(run_root / f"seed_{seed}")) for seed in cfg.experiment.seeds]
    if args.workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_run_one, payloads))
    else:
        results = [_run_one(p) for p in payloads]
    manifest = {
        "run_id": run_id,
        "config_hash": cfg.hash(),
        "seeds": list(cfg.experiment.seeds),
        "outputs": {str(seed): str(Path(p[2])) for seed, p in zip(cfg.experiment.seeds, payloads)},
        "status": {str(seed): ("complete" if ok else "failed") for seed, ok, _ in results},
    }
    (run_root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    for seed, ok, metrics in results:
        summary = ", ".join(f"{k}={metrics[k]:.3f}" for k in ("asr", "fm", "fwt") if k in metrics)
        print(f"seed {seed}: {'complete' if ok else 'FAILED'} {summary}")
    print(f"run directory: {run_root}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_RUN


def _find_sr_files(paths) -> list[Path]:
    found = []
    for p in map(Path, paths):
        if p.is_file():
            found.append(p)
        elif (p / "sr_matrix.csv").exists():
            found.append(p / "sr_matrix.csv")
        else:
            found.extend(sorted(p.glob("**/sr_matrix.csv")))
            if not any(p.glob("**/sr_matrix.csv")):
                found.append(p / "sr_matrix.csv")
    return found


def cmd_metrics(args) -> int:
    if not args.runs:
        raise UsageError("metrics needs at least one run directory")
    rows, bad = [], 0
    for path in _find_sr_files(args.runs):
        try:
            sr = read_sr_csv(path)
            s = MetricSummary.of(sr)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            bad += 1
            continue
        ar = s.asr if args.returns else None
        rows.append({"run": str(path.parent), "asr": s.asr, "fm": s.fm, "fwt": s.fwt, "ar": ar})
    keys = ["asr", "fm", "fwt"] + (["ar"] if args.returns else [])
    table = [[r["run"]] + [r[k] for k in keys] for r in rows]
    if rows:
        means = [mean_std(r[k] for r in rows) for k in keys]
        table.append(["mean"] + [m for m, _ in means])
        table.append(["std"] + [s for _, s in means])
    header = ["run"] + keys
    widths = [max(len(header[0]), *(len(str(t[0])) for t in table))] + [10] * len(keys)
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for t in table:
        print("  ".join([str(t[0]).ljust(widths[0])] + [f"{v:.4f}".ljust(10) for v in t[1:]]))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t in table:
                w.writerow([t[0]] + [repr(float(v)) for v in t[1:]])
    if not rows:
        return EXIT_IO
    return EXIT_IO if bad else EXIT_OK


def _parse_neuron(text: str) -> NeuronId:
    try:
        net, layer, index = text.split(":")
        return NeuronId(net, int(layer), int(index))
    except ValueError:
        raise UsageError(f"neuron id {text!r} must look like network:layer:index, e.g. actor:1:7") from None


def cmd_plot(args) -> int:
    if args.kind == "curves":
        run = Path(args.inputs[0])
        curves_path = run / "curves.csv" if run.is_dir() else run
        with open(curves_path, newline="") as fh:
            curves = [(int(r["segment"]), float(r["env_step"]), float(r["eval_value"])) for r in csv.DictReader(fh)]
        n_segments = max((c[0] for c in curves), default=0)
        cycle = None
        labels = None
        snapshot = curves_path.parent / "config.snapshot"
        if snapshot.exists():
            cfg = ExperimentConfig.load(snapshot)
            n_segments = len(cfg.segments)
            cycle = len(cfg.experiment.tasks)
            labels = [name.split("/")[-1] for name in cfg.segments]
        svg = plots.curves_svg(curves, n_segments, cycle, title=args.title or "evaluation during training",
                               segment_labels=labels, timestamp=args.timestamp)
    elif args.kind == "histogram":
        if len(args.inputs) != 2 or not args.neuron:
            raise UsageError("histogram needs ACTIVATIONS.csv GPM.csv and --neuron network:layer:index")
        neuron = _parse_neuron(args.neuron)
        try:
            steps, values = read_neuron_series(args.inputs[0], neuron)
        except KeyError as exc:
            print(f"error: {exc.args[0]}", file=sys.stderr)
            return EXIT_CONFIG
        gpm = read_gpm_csv(args.inputs[1])
        q = np.array([gpm[int(s)] for s in steps])
        high = q > q.mean()
        svg = plots.histogram_svg(values[high], values[~high], bins=args.bins,
                                  title=args.title or f"{neuron.network} layer {neuron.layer} neuron {neuron.index}",
                                  timestamp=args.timestamp)
    else:
        with open(args.inputs[0], newline="") as fh:
            data = [r for r in csv.DictReader(fh) if r["seed"] == "mean"]
        rows = [(float(r["proportion"]), float(r["asr"]), float(r["std"] or 0.0)) for r in data]
        svg = plots.sweep_svg(rows, title=args.title or "skill-neuron proportion sweep", timestamp=args.timestamp)
    Path(args.output).write_text(svg)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    proportions = [float(p) for p in args.proportions.split(",")]
    root = _out_root(args) / (args.run_id or f"sweep-{cfg.hash()}")
    rows = proportion_sweep(cfg, proportions, out_root=root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["proportion", "seed", "asr", "std"])
        for r in rows:
            w.writerow([repr(r["proportion"]), r["seed"], repr(r["asr"]), repr(r["std"]) if "std" in r else ""])
    for r in rows:
        if r["seed"] == "mean":
            print(f"proportion {r['proportion']:g}: ASR {r['asr']:.3f} +- {r['std']:.3f}")
    print(f"wrote {root / 'sweep.csv'}")
    return EXIT_OK


def cmd_identify(args) -> int:
    cfg = _load_config(args)
    task = envs.make_task(args.task, seed=args.seed or 0)
    first = cfg.task_specs[0]
    agent = SacAgent(task.obs_dim, task.action_dim, task.discrete, cfg.sac)
    if first.family != task.family:
        raise ConfigError(f"task {task.name} does not match the configured family {first.family}")
    agent.load(args.checkpoint)
    rng = np.random.default_rng(args.seed or 0)
    idc = cfg.identify
    skill_set, scores = identify(agent, task, idc.steps, rng, cfg.nbsp.proportion, idc.mode, idc.scope,
                                 idc.second_pass)
    shapes = {name: net.layer_sizes for name, net in agent.networks.items()}
    mask = build_mask(skill_set, cfg.nbsp.alpha_mask, shapes)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "scores.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow(["network", "layer", "index", "score", "selected", "mask"])
        for net, layer, index, m in mask.rows():
            nid = NeuronId(net, layer, index)
            s = scores.get(nid)
            w.writerow([net, layer, index, "" if s is None else repr(s), int(nid in skill_set.entries), repr(m)])
    if args.export_trace:
        trace = collect_trace(agent, task, idc.steps, rng, idc.mode)
        write_trace_csv(trace, out / "trace_activations.csv", out / "trace_gpm.csv")
    print(f"selected {len(skill_set)} skill neurons; wrote {out / 'scores.tsv'}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--preset", help="named preset, e.g. nbsp-pointmass-2task")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--method")
    p.add_argument("--proportion", type=float)
    p.add_argument("--alpha-mask", type=float)
    p.add_argument("--replay-interval", type=int)
    p.add_argument("--out", help=f"output root (overridden by ${OUT_ENV})")
    p.add_argument("--run-id")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nbsp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a cycling-task experiment for each seed")
    _add_common(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("metrics", help="ASR / FM / FWT table over run directories")
    p.add_argument("runs", nargs="*")
    p.add_argument("--csv", help="also write the table to this CSV file")
    p.add_argument("--returns", action="store_true", help="matrices hold normalized returns; add AR")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("plot", help="write an SVG chart")
    p.add_argument("kind", choices=("curves", "histogram", "sweep"))
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--neuron", help="network:layer:index for histograms")
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--title")
    p.add_argument("--timestamp", action="store_true", help="embed a generation-time comment")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("sweep", help="ASR across skill-neuron proportions")
    _add_common(p)
    p.add_argument("--proportions", default="0.05,0.1,0.2,0.3,0.5")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("identify", help="score neurons of a checkpoint on a task")
    _add_common(p)
    p.add_argument("checkpoint")
    p.add_argument("task", help="e.g. pointmass/goal-east")
    p.add_argument("--export-trace", action="store_true")
    p.set_defaults(func=cmd_identify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
