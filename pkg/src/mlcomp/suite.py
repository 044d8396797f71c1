"""Bundled benchmark suite loading."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .ir import Module, verify_module
from .irtext import parse_module


@dataclass(frozen=True)
class BenchmarkProgram:
    name: str
    file: str
    inputs: tuple[int, ...]
    text: str

    def module(self) -> Module:
        module = parse_module(self.text, name=self.name)
        verify_module(module)
        return module


def _bench_root():
    return resources.files("mlcomp").joinpath("benchmarks")


def load_suite() -> list[BenchmarkProgram]:
    manifest = json.loads(_bench_root().joinpath("suite.json").read_text())
    programs = []
    for entry in manifest["programs"]:
        text = _bench_root().joinpath(entry["file"]).read_text()
        programs.append(BenchmarkProgram(name=entry["name"], file=entry["file"],
                                         inputs=tuple(entry["inputs"]),
                                         text=text))
    return programs


def load_program(name: str) -> BenchmarkProgram:
    for program in load_suite():
        if program.name == name:
            return program
    raise KeyError(f"no bundled program '{name}'")


def load_golden_optima() -> dict:
    return json.loads(_bench_root().joinpath("golden_optima.json").read_text())
