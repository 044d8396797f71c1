#!/usr/bin/env python3
"""Generate the committed protocol conformance transcripts.

Each transcript alternates `> request` / `< response` lines for one session,
produced by the primary engine with LOAD paths relative to the repo root.
Every verb and every error code is covered across the corpus.
"""

import os
import sys

sys.path.insert(0, "src")

from mlcomp.features import FI_FEATURES, LU_FEATURES
from mlcomp.server import InferenceEngine

OUT = "conformance/transcripts"
LU_MODEL = "conformance/models/fixture-lu.acpo"
FI_MODEL = "conformance/models/fixture-fi.acpo"


def lu_payload(offset: int = 0) -> str:
    values = []
    for i, (name, typ) in enumerate(LU_FEATURES):
        if typ == "float":
            values.append(f"{name}={(i + offset) * 0.25}")
        else:
            values.append(f"{name}={(i * 3 + offset) % 65}")
    return ",".join(values)


def fi_payload(offset: int = 0) -> str:
    values = []
    for i, (name, typ) in enumerate(FI_FEATURES):
        if typ == "float":
            values.append(f"{name}={(i + offset) * 1.5}")
        else:
            values.append(f"{name}={(i * 2 + offset) % 13}")
    return ",".join(values)


SESSIONS = {
    "01-status-close": ["STATUS", "CLOSE"],
    "02-lu-inference": [
        f"LOAD {LU_MODEL}",
        f"SET LU {lu_payload()}",
        "RUN LU",
        "GET LU LU-Type",
        "GET LU LU-Count",
        f"SET LU {lu_payload(7)}",
        "RUN LU",
        "GET LU LU-Count",
        "CLOSE",
    ],
    "03-fi-inference": [
        f"LOAD {FI_MODEL}",
        f"SET FI {fi_payload()}",
        "RUN FI",
        "GET FI FI-ShouldInline",
        "FREE FI",
        "CLOSE",
    ],
    "04-load-idempotent": [
        f"LOAD {LU_MODEL}",
        f"LOAD {LU_MODEL}",
        "STATUS",
        "CLOSE",
    ],
    "05-load-errors": [
        "LOAD conformance/models/no-such-file.acpo",
        "LOAD conformance/models/garbage.acpo",
        "LOAD conformance/models/gap.acpo",
        "LOAD conformance/models/missing-weights.acpo",
        "LOAD conformance/models/badweights.acpo",
        "CLOSE",
    ],
    "06-register-run": [
        "REGISTER MODEL tiny 2 1",
        "REGISTER FEATURE tiny 0 f0 int",
        "REGISTER FEATURE tiny 1 f1 float",
        "REGISTER OUTPUT tiny out0 int",
        "SET tiny f0=1,f1=0.5",
        "RUN tiny",
        "CLOSE",
    ],
    "07-set-errors": [
        f"LOAD {LU_MODEL}",
        "SET LU Bogus=1",
        "SET LU garbage",
        "SET LU TripCount=abc",
        "SET LU TripCount=64",
        "SET LU TripCount=64,TripCount=64",
        "RUN LU",
        "CLOSE",
    ],
    "08-run-get-errors": [
        f"LOAD {LU_MODEL}",
        "RUN LU",
        "GET LU LU-Count",
        "GET LU Bogus",
        "GET nosuch LU-Count",
        "RUN nosuch",
        "CLOSE",
    ],
    "09-free-reload": [
        f"LOAD {LU_MODEL}",
        "FREE LU",
        "RUN LU",
        "FREE LU",
        f"LOAD {LU_MODEL}",
        "CLOSE",
    ],
    "10-parse-errors": [
        "",
        "FOO",
        "LOAD",
        "LOAD two paths",
        "REGISTER",
        "REGISTER THING x 1 1",
        "STATUS extra",
        "GET LU",
        "RUN",
        "FREE",
        "CLOSE",
    ],
    "11-two-models": [
        f"LOAD {LU_MODEL}",
        f"LOAD {FI_MODEL}",
        f"SET LU {lu_payload(3)}",
        f"SET FI {fi_payload(1)}",
        "RUN LU",
        "RUN FI",
        "GET LU LU-Count",
        "GET FI FI-ShouldInline",
        f"SET LU {lu_payload(11)}",
        "GET LU LU-Count",
        "GET FI FI-ShouldInline",
        "CLOSE",
    ],
    "12-register-errors": [
        "REGISTER MODEL t2 1 1",
        "REGISTER FEATURE t2 0 flag bool",
        "SET t2 flag=2",
        "SET t2 flag=1",
        "REGISTER FEATURE t2 5 x int",
        "REGISTER FEATURE t2 0 flag2 int",
        "REGISTER FEATURE nosuch 0 x int",
        "REGISTER OUTPUT t2 o1 int",
        "REGISTER OUTPUT t2 o2 int",
        "REGISTER OUTPUT t2 o1 bool",
        "REGISTER OUTPUT nosuch o int",
        "CLOSE",
    ],
    "13-close-only": ["CLOSE"],
}


def main():
    os.makedirs(OUT, exist_ok=True)
    for name, requests in sorted(SESSIONS.items()):
        engine = InferenceEngine(base_dir=".")
        lines = []
        closed = False
        for request in requests:
            assert not closed, f"{name}: request after CLOSE"
            response, closed = engine.handle_line(request)
            lines.append(f"> {request}" if request else ">")
            lines.append(f"< {response}")
        assert closed, f"{name}: session must end with CLOSE"
        path = os.path.join(OUT, f"{name}.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        print("wrote", path)


if __name__ == "__main__":
    main()
