"""Command-line driver: compile, tune, train, loocv, serve, report.

The default model-server endpoint comes from MLCOMP_ENDPOINT (falling back to
an in-process server). Cost-model parameters can be overridden with a
key=value config file via --cost-config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .autotune import read_trial_logs, tune, write_trial_logs
from .costmodel import CostModel, measure
from .ir import verify_module
from .irtext import parse_module, print_module
from .pipeline import CompilationAborted, PipelineConfig, run_pipeline
from .report import (BuildSummary, comparison_report, overhead_breakdown,
                     render_overhead)
from .suite import load_program, load_suite
from .train import TrainConfig, build_dataset, export_model, loocv, train


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CompilationAborted as exc:
        print(f"error: compilation aborted: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlcomp",
        description="miniature compiler with model-served unroll/inline "
                    "profitability decisions")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="optimize one program")
    p.add_argument("program", help="path to a .mir file or bundled benchmark name")
    p.add_argument("--input", default="", help="space-separated entry inputs")
    p.add_argument("-o", "--out", help="output directory for build artifacts")
    p.add_argument("--enable-acpo-lu", action="store_true")
    p.add_argument("--enable-acpo-fi", action="store_true")
    p.add_argument("--unroll-count", type=int, default=None,
                   help="explicit user unroll count (highest priority)")
    p.add_argument("--on-failure", choices=("abort", "fallback"), default="abort")
    p.add_argument("--model-dir", default="models")
    p.add_argument("--endpoint", default=None)
    p.add_argument("--spawn-server", action="store_true")
    p.add_argument("--cost-config", help="key=value file with cost-model params")
    p.add_argument("--print-ir", action="store_true")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("tune", help="autotune programs and write trial logs")
    p.add_argument("programs", nargs="*",
                   help=".mir paths or bundled names; default: whole suite")
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--strategy", choices=("random", "hillclimb", "exhaustive"),
                   default="hillclimb")
    p.add_argument("--pass", dest="pass_kinds", choices=("lu", "fi", "both"),
                   default="both")
    p.add_argument("--input", default=None, help="inputs for explicit .mir paths")
    p.add_argument("--out", required=True, help="trial log directory")
    p.add_argument("--cost-config")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("train", help="build datasets from logs and train models")
    p.add_argument("--logs", nargs="+", required=True,
                   help="trial log files or directories")
    p.add_argument("--out", required=True, help="model output directory")
    p.add_argument("--kind", choices=("lu", "fi", "both"), default="both")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--speedup-floor", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("loocv", help="leave-one-out cross-validation table")
    p.add_argument("--logs", nargs="+", required=True)
    p.add_argument("--kind", choices=("lu", "fi"), default="lu")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--speedup-floor", type=float, default=1.0)
    p.set_defaults(func=cmd_loocv)

    p = sub.add_parser("serve", help="run a model server until CLOSE")
    p.add_argument("--endpoint", required=True, help="pipe:PATH or unix:PATH")
    p.add_argument("--base-dir", default=None,
                   help="directory LOAD paths resolve against")
    p.add_argument("--models", nargs="*", default=(),
                   help="model spec files to preload")
    p.add_argument("--impl", choices=("primary", "ref"), default="primary")
    p.add_argument("--log", default=None, help="request/response log file")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="compare baseline and optimized builds")
    p.add_argument("--pair", nargs=3, action="append", metavar=("NAME", "BASE", "ACPO"),
                   required=True, help="program name + two build directories")
    p.set_defaults(func=cmd_report)
    return parser


def _cost_model(args) -> CostModel:
    path = getattr(args, "cost_config", None)
    if not path:
        return CostModel()
    params = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            params[key.strip()] = value.strip()
    return CostModel.from_dict(params)


def _load_program(spec: str, input_text):
    """Either a path to a .mir file or the name of a bundled benchmark."""
    if os.path.exists(spec):
        with open(spec, encoding="utf-8") as fh:
            name = os.path.splitext(os.path.basename(spec))[0]
            module = parse_module(fh.read(), name=name)
        verify_module(module)
        inputs = [int(v) for v in input_text.split()] if input_text else []
        return name, module, inputs
    program = load_program(spec)
    module = program.module()
    inputs = [int(v) for v in input_text.split()] if input_text \
        else list(program.inputs)
    return program.name, module, inputs


def _endpoint(args) -> str:
    return args.endpoint or os.environ.get("MLCOMP_ENDPOINT", "inproc")


def cmd_compile(args) -> int:
    name, module, inputs = _load_program(args.program, args.input)
    config = PipelineConfig(
        enable_acpo_lu=args.enable_acpo_lu,
        enable_acpo_fi=args.enable_acpo_fi,
        user_unroll_count=args.unroll_count,
        on_failure="abort" if args.on_failure == "abort" else "fallback-heuristic",
        endpoint=_endpoint(args),
        model_dir=args.model_dir,
        spawn_server=args.spawn_server)
    optimized, trace = run_pipeline(module, config)
    cm = _cost_model(args)
    if args.print_ir:
        print(print_module(optimized), end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "optimized.mir"), "w") as fh:
            fh.write(print_module(optimized))
        with open(os.path.join(args.out, "trace.log"), "w") as fh:
            fh.write(trace.render_log())
        with open(os.path.join(args.out, "trace.csv"), "w") as fh:
            fh.write(trace.to_csv())
        with open(os.path.join(args.out, "overhead.json"), "w") as fh:
            json.dump(overhead_breakdown(trace), fh, indent=2)
        meas = measure(optimized, inputs, cm)
        with open(os.path.join(args.out, "measure.json"), "w") as fh:
            json.dump({"cost": str(meas.cost), "size": meas.size,
                       "result": meas.profile.result}, fh, indent=2)
    print(f"compiled {name}: {len(trace.decisions)} decisions, "
          f"{len(trace.advised())} model-advised")
    return 0


def cmd_tune(args) -> int:
    cm = _cost_model(args)
    kinds = {"lu": ("LU",), "fi": ("FI",), "both": ("LU", "FI")}[args.pass_kinds]
    if args.programs:
        targets = [_load_program(p, args.input) for p in args.programs]
    else:
        targets = [(p.name, p.module(), list(p.inputs)) for p in load_suite()]
    if args.iterations <= 0:
        print("warning: 0 iterations requested; writing empty logs")
    for name, module, inputs in targets:
        result = tune(module, pass_kinds=kinds, iterations=args.iterations,
                      cm=cm, seed=args.seed, strategy=args.strategy,
                      inputs=inputs, program=name)
        paths = write_trial_logs(result, args.out)
        best = result.best_trial()
        best_cost = float(best.measurement.cost) if best else float("nan")
        print(f"tuned {name}: {len(result.trials)} trials, "
              f"best cost {best_cost:g}, logs: {', '.join(paths) or 'none'}")
    return 0


def _collect_logs(specs) -> list[str]:
    paths = []
    for spec in specs:
        if os.path.isdir(spec):
            paths.extend(sorted(
                os.path.join(spec, f) for f in os.listdir(spec)
                if f.endswith(".csv")))
        else:
            paths.append(spec)
    return paths


def cmd_train(args) -> int:
    rows = read_trial_logs(_collect_logs(args.logs))
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         learning_rate=args.learning_rate, seed=args.seed,
                         speedup_floor=args.speedup_floor)
    kinds = {"lu": ("LU",), "fi": ("FI",), "both": ("LU", "FI")}[args.kind]
    os.makedirs(args.out, exist_ok=True)
    for kind in kinds:
        samples = build_dataset(rows, kind, config)
        clf, report = train(samples, kind, config)
        spec_path = export_model(clf, kind, args.out)
        report_path = os.path.join(args.out, f"train-report-{kind.lower()}.json")
        with open(report_path, "w") as fh:
            fh.write(report.to_json())
        print(f"trained {kind}: {report.n_samples} samples, "
              f"final top-1 {report.train_top1[-1]:.3f}, model: {spec_path}")
    return 0


def cmd_loocv(args) -> int:
    rows = read_trial_logs(_collect_logs(args.logs))
    config = TrainConfig(epochs=args.epochs, seed=args.seed,
                         speedup_floor=args.speedup_floor)
    report = loocv(rows, args.kind.upper(), config)
    print(report.render(), end="")
    return 0


def cmd_serve(args) -> int:
    if args.impl == "ref":
        return _serve_ref(args)
    from .server import InferenceEngine, serve_endpoint

    engine = InferenceEngine(base_dir=args.base_dir)
    for path in args.models:
        response, _ = engine.handle_line(f"LOAD {path}")
        print(f"preload {path}: {response}")
        if response.startswith("ERR"):
            return 1
    serve_endpoint(args.endpoint, engine,
                   on_ready=lambda: print(f"ready on {args.endpoint}", flush=True),
                   log_path=args.log)
    return 0


def _serve_ref(args) -> int:
    """Launch the reference server implementation (node)."""
    import subprocess

    script = os.environ.get("MLCOMP_REFSERVER_JS")
    if not script:
        here = os.path.dirname(os.path.dirname(os.path.dirname(
            os.path.abspath(__file__))))
        candidate = os.path.join(here, "..", "refserver", "dist", "server.js")
        script = os.path.normpath(candidate)
    if not os.path.isfile(script):
        print("error: reference server not built (set MLCOMP_REFSERVER_JS or "
              "run `npm run build` in refserver/)", file=sys.stderr)
        return 1
    argv = ["node", script, "--endpoint", args.endpoint]
    if args.base_dir:
        argv += ["--base-dir", args.base_dir]
    if args.log:
        argv += ["--log", args.log]
    for path in args.models:
        argv += ["--preload", path]
    return subprocess.call(argv)


def cmd_report(args) -> int:
    pairs = []
    overheads = []
    for name, base_dir, acpo_dir in args.pair:
        base = BuildSummary.from_measure_file(
            "baseline", os.path.join(base_dir, "measure.json"))
        acpo = BuildSummary.from_measure_file(
            "acpo", os.path.join(acpo_dir, "measure.json"))
        pairs.append((name, base, acpo))
        overhead_path = os.path.join(acpo_dir, "overhead.json")
        if os.path.exists(overhead_path):
            with open(overhead_path, encoding="utf-8") as fh:
                overheads.append((name, json.load(fh)))
    print(comparison_report(pairs), end="")
    for name, breakdown in overheads:
        print(f"\noverhead breakdown: {name}")
        print(render_overhead(breakdown), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
