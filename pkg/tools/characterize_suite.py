#!/usr/bin/env python3
"""Characterize the bundled suite: spaces, optima, headroom, label spread.

Development tool for keeping the suite's learning problem healthy; also
regenerates benchmarks/golden_optima.json when run with --write-goldens.
"""

import argparse
import json
import sys
import time
from fractions import Fraction

sys.path.insert(0, "src")

from mlcomp.autotune import enumerate_search_space, exhaustive_best, tune
from mlcomp.costmodel import measure
from mlcomp.pipeline import PipelineConfig, run_pipeline
from mlcomp.suite import load_suite


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--write-goldens", action="store_true")
    parser.add_argument("--hillclimb", type=int, default=0,
                        help="also run hillclimb with this many iterations")
    args = parser.parse_args()

    goldens = {}
    for program in load_suite():
        t0 = time.time()
        module = program.module()
        inputs = list(program.inputs)
        space = enumerate_search_space(module)
        base_module, _ = run_pipeline(module, PipelineConfig())
        base = measure(base_module, inputs)
        unopt = measure(module, inputs)
        best_cfg, best_meas = exhaustive_best(module, inputs=inputs)
        headroom = float(Fraction(base.cost, best_meas.cost))
        print(f"{program.name:<12} space={space.size():>5} "
              f"unopt={float(unopt.cost):>8.0f} base={float(base.cost):>8.0f} "
              f"opt={float(best_meas.cost):>8.0f} "
              f"headroom={headroom:>6.3f} size(base)={base.size:>4} "
              f"opt_cfg={json.dumps(best_cfg, sort_keys=True)} "
              f"[{time.time()-t0:.1f}s]")
        if args.hillclimb:
            r = tune(module, iterations=args.hillclimb, seed=7,
                     strategy="hillclimb", inputs=inputs, program=program.name)
            hb = r.best_trial()
            gap = float(Fraction(hb.measurement.cost, best_meas.cost))
            print(f"{'':<12} hillclimb best={float(hb.measurement.cost):>8.0f} "
                  f"gap={gap:.4f}")
        goldens[program.name] = {
            "space": space.size(),
            "result": unopt.profile.result,
            "baseline_cost": str(base.cost),
            "optimum_cost": str(best_meas.cost),
            "optimum_config": best_cfg,
        }
    if args.write_goldens:
        path = "src/mlcomp/benchmarks/golden_optima.json"
        with open(path, "w") as fh:
            json.dump(goldens, fh, indent=2, sort_keys=True)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
