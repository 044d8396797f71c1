#!/usr/bin/env python3
"""Dry run of the full learning loop: tune -> dataset -> LOOCV train ->
deploy via the pipeline -> per-program recovery of the exhaustive optimum."""

import sys
import time
from fractions import Fraction

sys.path.insert(0, "src")

from mlcomp.autotune import exhaustive_best, tune
from mlcomp.client import connect
from mlcomp.costmodel import measure
from mlcomp.pipeline import PipelineConfig, run_pipeline
from mlcomp.server import InferenceEngine
from mlcomp.suite import load_suite
from mlcomp.train import TrainConfig, build_dataset, export_model, train
from mlcomp.autotune import write_trial_logs, read_trial_logs
import tempfile, os, json

SEED = 7
ITERATIONS = 100


def main():
    t0 = time.time()
    suite = load_suite()
    rows = []
    optima = {}
    baselines = {}
    with tempfile.TemporaryDirectory() as td:
        for program in suite:
            module = program.module()
            inputs = list(program.inputs)
            result = tune(module, iterations=ITERATIONS, seed=SEED,
                          strategy="hillclimb", inputs=inputs,
                          program=program.name)
            paths = write_trial_logs(result, os.path.join(td, "logs"))
            rows.extend(read_trial_logs(paths))
            baselines[program.name] = result.baseline
            cfg, meas = exhaustive_best(module, inputs=inputs)
            optima[program.name] = meas
            best = result.best_trial()
            gap = float(Fraction(best.measurement.cost, meas.cost))
            print(f"tuned {program.name:<12} best={float(best.measurement.cost):>7.0f} "
                  f"opt={float(meas.cost):>7.0f} hillclimb-gap={gap:.4f}")
        print(f"[tune+exhaustive done at {time.time()-t0:.0f}s]")

        tc = TrainConfig(epochs=300, seed=SEED)
        speedups = []
        failures = []
        for program in suite:
            fold_rows = [r for r in rows if r.program != program.name]
            lu = build_dataset(fold_rows, "LU", tc)
            fi = build_dataset(fold_rows, "FI", tc)
            clf_lu, _ = train(lu, "LU", tc)
            clf_fi, _ = train(fi, "FI", tc)
            mdir = os.path.join(td, f"models-{program.name}")
            export_model(clf_lu, "LU", mdir)
            export_model(clf_fi, "FI", mdir)

            module = program.module()
            inputs = list(program.inputs)
            engine = InferenceEngine(base_dir=mdir)
            client = connect("inproc", engine=engine)
            pcfg = PipelineConfig(enable_acpo_lu=True, enable_acpo_fi=True,
                                  model_dir=mdir)
            opt_module, trace = run_pipeline(module, pcfg, client=client)
            client.close()
            ml = measure(opt_module, inputs)
            base = baselines[program.name]
            opt = optima[program.name]
            gain_ml = float(base.cost - ml.cost)
            gain_opt = float(base.cost - opt.cost)
            recovery = gain_ml / gain_opt if gain_opt > 0 else (1.0 if gain_ml >= 0 else 0.0)
            sp = float(Fraction(base.cost, ml.cost))
            speedups.append(sp)
            ok = recovery >= 0.9
            if not ok:
                failures.append(program.name)
            decisions = {d.region_id: d.applied for d in trace.decisions
                         if d.source == "ml-model"}
            print(f"{program.name:<12} base={float(base.cost):>7.0f} "
                  f"ml={float(ml.cost):>7.0f} opt={float(opt.cost):>7.0f} "
                  f"recovery={recovery:>6.3f} speedup={sp:>6.3f} {'OK' if ok else 'FAIL'}")
            if not ok:
                print("   ml decisions:", json.dumps(decisions, sort_keys=True))
        geo = 1.0
        for sp in speedups:
            geo *= sp
        geo **= 1.0 / len(speedups)
        print(f"geomean speedup vs baseline: {geo:.4f} (need >= 1.0)")
        print(f"failures (<90% recovery): {failures or 'none'}")
        print(f"[total {time.time()-t0:.0f}s]")


if __name__ == "__main__":
    main()
