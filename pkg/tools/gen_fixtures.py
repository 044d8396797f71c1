#!/usr/bin/env python3
"""Generate the committed conformance fixture models and bad-input files."""

import os
import sys

import numpy as np

sys.path.insert(0, "src")

from mlcomp.features import FI_FEATURES, LU_FEATURES
from mlcomp.server import ModelSpec, write_spec, write_weights

OUT = "conformance/models"


def layers_for(dims, rng):
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        w = np.round(rng.uniform(-1.0, 1.0, size=(fan_out, fan_in)), 6)
        b = np.round(rng.uniform(-0.5, 0.5, size=fan_out), 6)
        layers.append(([list(map(float, row)) for row in w],
                       [float(v) for v in b]))
    return layers


def main():
    os.makedirs(OUT, exist_ok=True)
    rng = np.random.default_rng(20240517)

    lu = ModelSpec(
        name="LU", schema_version=1, features=LU_FEATURES,
        outputs=(("LU-Type", "int"), ("LU-Count", "int")),
        classes=(0, 2, 4, 8, 16, 32, 64),
        mean=tuple(round(float(v), 6) for v in rng.uniform(0, 8, size=30)),
        std=tuple(round(float(v), 6) for v in rng.uniform(0.5, 4, size=30)),
        weights_path="fixture-lu.weights")
    write_spec(f"{OUT}/fixture-lu.acpo", lu)
    write_weights(f"{OUT}/fixture-lu.weights", layers_for((30, 6, 7), rng))

    fi = ModelSpec(
        name="FI", schema_version=1, features=FI_FEATURES,
        outputs=(("FI-ShouldInline", "bool"),),
        classes=(0, 1),
        mean=tuple(round(float(v), 6) for v in rng.uniform(0, 8, size=13)),
        std=tuple(round(float(v), 6) for v in rng.uniform(0.5, 4, size=13)),
        weights_path="fixture-fi.weights")
    write_spec(f"{OUT}/fixture-fi.acpo", fi)
    write_weights(f"{OUT}/fixture-fi.weights", layers_for((13, 5, 2), rng))

    with open(f"{OUT}/garbage.acpo", "w") as fh:
        fh.write("this is not a model spec at all\n{]\n")

    gap = ["name=GAP", "schema=1", "features=2", "feature.0=a:int",
           "output.0=LU-Count:int", "classes=0,1",
           "standardize.mean=0,0", "standardize.std=1,1",
           "weights=fixture-lu.weights"]
    with open(f"{OUT}/gap.acpo", "w") as fh:
        fh.write("\n".join(gap) + "\n")  # feature.1 missing

    missing = ["name=MISSING", "schema=1", "features=1", "feature.0=a:int",
               "output.0=LU-Count:int", "classes=0,1", "standardize.mean=0",
               "standardize.std=1", "weights=does-not-exist.weights"]
    with open(f"{OUT}/missing-weights.acpo", "w") as fh:
        fh.write("\n".join(missing) + "\n")

    bad = ["name=BAD", "schema=1", "features=3", "feature.0=a:int",
           "feature.1=b:int", "feature.2=c:int", "output.0=LU-Count:int",
           "classes=0,1", "standardize.mean=0,0,0", "standardize.std=1,1,1",
           "weights=bad.weights"]
    with open(f"{OUT}/badweights.acpo", "w") as fh:
        fh.write("\n".join(bad) + "\n")
    with open(f"{OUT}/bad.weights", "w") as fh:
        # 2-input layer for a 3-feature spec
        fh.write("ACPOW 1\nLAYER 2 2\n0.5 0.5\n0.25 -0.25\nBIAS\n0.0 0.0\n")

    print("fixtures written to", OUT)


if __name__ == "__main__":
    main()
