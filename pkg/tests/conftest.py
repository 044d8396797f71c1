import os

import pytest

from mlcomp.ir import verify_module
from mlcomp.irtext import parse_module

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TRANSCRIPT_DIR = os.path.join(REPO_ROOT, "conformance", "transcripts")
FIXTURE_MODELS = os.path.join(REPO_ROOT, "conformance", "models")


def parse(text: str, name: str = "m"):
    module = parse_module(text, name=name)
    verify_module(module)
    return module


def load_transcript(path: str) -> list[tuple[str, str]]:
    """Read a committed transcript into (request, response) pairs."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    pending = None
    for line in lines:
        if line.startswith(">"):
            assert pending is None, f"{path}: two requests in a row"
            pending = line[2:] if len(line) > 1 else ""
        elif line.startswith("< "):
            assert pending is not None, f"{path}: response without request"
            pairs.append((pending, line[2:]))
            pending = None
        elif line:
            raise AssertionError(f"{path}: unexpected line {line!r}")
    assert pending is None, f"{path}: request without response"
    return pairs


def transcript_files() -> list[str]:
    return sorted(os.path.join(TRANSCRIPT_DIR, f)
                  for f in os.listdir(TRANSCRIPT_DIR) if f.endswith(".txt"))


@pytest.fixture
def fixture_models_dir():
    return FIXTURE_MODELS
