import math
import os
import random

import pytest

from mlcomp.features import FI_FEATURES, LU_FEATURES
from mlcomp.server import (InferenceEngine, ModelSpec, SpecError, WeightsError,
                           mlp_forward, parse_spec, parse_weights, predict,
                           validate_dims, write_spec, write_weights)

from conftest import FIXTURE_MODELS, REPO_ROOT
from oracles import mlp_oracle


def random_layers(rng, dims):
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        w = [[rng.uniform(-1, 1) for _ in range(fan_in)] for _ in range(fan_out)]
        b = [rng.uniform(-1, 1) for _ in range(fan_out)]
        layers.append((w, b))
    return layers


# ---------------------------------------------------------------------------
# spec and weights files


def test_bundled_fixture_spec_parses():
    spec = parse_spec(os.path.join(FIXTURE_MODELS, "fixture-lu.acpo"))
    assert spec.name == "LU"
    assert spec.num_features == 30
    assert spec.features == LU_FEATURES
    assert dict(spec.outputs) == {"LU-Type": "int", "LU-Count": "int"}
    assert spec.classes == (0, 2, 4, 8, 16, 32, 64)


def test_spec_with_index_gap_rejected():
    with pytest.raises(SpecError, match="feature.1"):
        parse_spec(os.path.join(FIXTURE_MODELS, "gap.acpo"))


def test_spec_missing_weights_detected_at_load():
    engine = InferenceEngine(base_dir=REPO_ROOT)
    response, _ = engine.handle_line(
        "LOAD conformance/models/missing-weights.acpo")
    assert response == "ERR PARSE cannot read weights file"


def test_weights_dim_mismatch_rejected():
    spec = parse_spec(os.path.join(FIXTURE_MODELS, "badweights.acpo"))
    layers = parse_weights(os.path.join(FIXTURE_MODELS, "bad.weights"))
    with pytest.raises(WeightsError):
        validate_dims(spec, layers)


def test_weights_round_trip(tmp_path):
    rng = random.Random(0)
    layers = random_layers(rng, (4, 7, 3))
    path = tmp_path / "w.weights"
    write_weights(str(path), layers)
    assert parse_weights(str(path)) == layers


def test_spec_round_trip(tmp_path):
    spec = ModelSpec(name="LU", schema_version=1, features=LU_FEATURES,
                     outputs=(("LU-Type", "int"), ("LU-Count", "int")),
                     classes=(0, 2, 4, 8, 16, 32, 64),
                     mean=tuple(float(i) for i in range(30)),
                     std=tuple(1.0 + i / 7 for i in range(30)),
                     weights_path="w.weights")
    write_weights(str(tmp_path / "w.weights"),
                  random_layers(random.Random(1), (30, 4, 7)))
    write_spec(str(tmp_path / "m.acpo"), spec)
    assert parse_spec(str(tmp_path / "m.acpo")) == spec


def test_corrupted_weights_rejected(tmp_path):
    path = tmp_path / "w.weights"
    path.write_text("ACPOW 1\nLAYER 2 2\n1.0 2.0\n3.0 banana\nBIAS\n0 0\n")
    with pytest.raises(WeightsError, match="invalid number"):
        parse_weights(str(path))


# ---------------------------------------------------------------------------
# forward pass


def test_zero_weights_give_uniform_distribution():
    layers = [([[0.0] * 5] * 4, [0.0] * 4), ([[0.0] * 4] * 3, [0.0] * 3)]
    probs = mlp_forward(layers, [1.0, -2.0, 3.0, 0.5, 9.0])
    assert probs == pytest.approx([1 / 3] * 3)


def test_forward_matches_dense_oracle():
    rng = random.Random(42)
    for _ in range(50):
        dims = (rng.randint(2, 12), rng.randint(2, 16),
                rng.randint(2, 16), rng.randint(2, 7))
        layers = random_layers(rng, dims)
        x = [rng.uniform(-10, 10) for _ in range(dims[0])]
        got = mlp_forward(layers, x)
        want = mlp_oracle(layers, x)
        assert max(abs(a - b) for a, b in zip(got, want)) < 1e-6
        assert abs(sum(got) - 1.0) < 1e-9


def test_logit_shift_invariance_of_argmax():
    rng = random.Random(7)
    layers = random_layers(rng, (6, 8, 5))
    x = [rng.uniform(-5, 5) for _ in range(6)]
    base = mlp_forward(layers, x)
    w, b = layers[-1]
    shifted = layers[:-1] + [(w, [v + 2.5 for v in b])]
    moved = mlp_forward(shifted, x)
    assert base.index(max(base)) == moved.index(max(moved))


# ---------------------------------------------------------------------------
# predict rules


def spec_for_predict():
    return ModelSpec(
        name="LU", schema_version=1, features=LU_FEATURES,
        outputs=(("LU-Type", "int"), ("LU-Count", "int")),
        classes=(0, 2, 4, 8, 16, 32, 64),
        mean=(0.0,) * 30, std=(1.0,) * 30, weights_path="x")


def biased_layers(class_index, n_classes=7, n_features=30):
    # last-layer bias dominates: argmax lands on class_index
    w = [[0.0] * n_features for _ in range(n_classes)]
    b = [10.0 if i == class_index else 0.0 for i in range(n_classes)]
    return [(w, b)]


def raw_with_trip(trip):
    names = [name for name, _ in LU_FEATURES]
    return [float(trip) if n == "TripCount" else 1.0 for n in names]


def test_predict_count_from_argmax():
    out = predict(spec_for_predict(), biased_layers(2), raw_with_trip(64))
    assert out["LU-Count"] == 4


def test_predict_type_full_when_count_covers_trip():
    out = predict(spec_for_predict(), biased_layers(4), raw_with_trip(8))
    assert out["LU-Count"] == 16
    assert out["LU-Type"] == 1  # full


def test_predict_type_runtime_when_trip_unknown():
    out = predict(spec_for_predict(), biased_layers(2), raw_with_trip(0))
    assert out["LU-Type"] == 3


def test_predict_type_none_for_zero_count():
    out = predict(spec_for_predict(), biased_layers(0), raw_with_trip(8))
    assert out["LU-Count"] == 0
    assert out["LU-Type"] == 0


def test_predict_fi_threshold():
    spec = ModelSpec(name="FI", schema_version=1, features=FI_FEATURES,
                     outputs=(("FI-ShouldInline", "bool"),), classes=(0, 1),
                     mean=(0.0,) * 13, std=(1.0,) * 13, weights_path="x")
    yes = [([[0.0] * 13, [0.0] * 13], [0.0, 1.0])]
    no = [([[0.0] * 13, [0.0] * 13], [1.0, 0.0])]
    tie = [([[0.0] * 13, [0.0] * 13], [0.5, 0.5])]
    raw = [1.0] * 13
    assert predict(spec, yes, raw)["FI-ShouldInline"] is True
    assert predict(spec, no, raw)["FI-ShouldInline"] is False
    assert predict(spec, tie, raw)["FI-ShouldInline"] is True  # p == 0.5


# ---------------------------------------------------------------------------
# engine state machine


def lu_set_line(offset=0):
    pairs = []
    for i, (name, typ) in enumerate(LU_FEATURES):
        value = f"{(i + offset) * 0.5}" if typ == "float" else str(i + offset)
        pairs.append(f"{name}={value}")
    return "SET LU " + ",".join(pairs)


def make_engine():
    return InferenceEngine(base_dir=REPO_ROOT)


def test_load_is_idempotent():
    engine = make_engine()
    assert engine.handle_line("LOAD conformance/models/fixture-lu.acpo")[0] == "OK"
    assert engine.loads == 1
    assert engine.handle_line("LOAD conformance/models/fixture-lu.acpo")[0] == "OK"
    assert engine.loads == 1  # no re-parse


def test_run_results_stable_until_set():
    engine = make_engine()
    engine.handle_line("LOAD conformance/models/fixture-lu.acpo")
    engine.handle_line(lu_set_line())
    assert engine.handle_line("RUN LU")[0] == "OK"
    first = engine.handle_line("GET LU LU-Count")[0]
    for _ in range(3):
        assert engine.handle_line("GET LU LU-Count")[0] == first
    engine.handle_line(lu_set_line())  # buffer replaced, outputs invalidated
    assert engine.handle_line("GET LU LU-Count")[0] == \
        "ERR NOFEATURES no results available"


def test_failed_set_clears_buffer():
    engine = make_engine()
    engine.handle_line("LOAD conformance/models/fixture-lu.acpo")
    engine.handle_line(lu_set_line())
    assert engine.handle_line("SET LU Bogus=1")[0] == \
        "ERR FEATURE unknown feature Bogus"
    assert engine.handle_line("RUN LU")[0] == "ERR NOFEATURES features not set"


def test_two_models_do_not_interfere():
    engine = make_engine()
    engine.handle_line("LOAD conformance/models/fixture-lu.acpo")
    engine.handle_line("LOAD conformance/models/fixture-fi.acpo")
    fi_pairs = ",".join(f"{name}={i}.5" if typ == "float" else f"{name}={i}"
                        for i, (name, typ) in enumerate(FI_FEATURES))
    engine.handle_line(lu_set_line())
    engine.handle_line(f"SET FI {fi_pairs}")
    engine.handle_line("RUN LU")
    engine.handle_line("RUN FI")
    fi_before = engine.handle_line("GET FI FI-ShouldInline")[0]
    for offset in (3, 9, 21):
        engine.handle_line(lu_set_line(offset))
        engine.handle_line("RUN LU")
        assert engine.handle_line("GET FI FI-ShouldInline")[0] == fi_before


def test_free_then_run_is_nomodel():
    engine = make_engine()
    engine.handle_line("LOAD conformance/models/fixture-lu.acpo")
    assert engine.handle_line("FREE LU")[0] == "OK"
    assert engine.handle_line("RUN LU")[0] == "ERR NOMODEL unknown model"


def test_close_ends_session():
    engine = make_engine()
    response, closed = engine.handle_line("CLOSE")
    assert response == "OK" and closed


def test_interleaved_models_property():
    rng = random.Random(9)
    engine = make_engine()
    engine.handle_line("LOAD conformance/models/fixture-lu.acpo")
    engine.handle_line("LOAD conformance/models/fixture-fi.acpo")
    last = {}
    for _ in range(60):
        kind = rng.choice(("LU", "FI"))
        if kind == "LU":
            engine.handle_line(lu_set_line(rng.randint(0, 50)))
            engine.handle_line("RUN LU")
            value = engine.handle_line("GET LU LU-Count")[0]
            last["LU"] = value
        else:
            pairs = ",".join(
                f"{name}={rng.randint(0, 9)}.25" if typ == "float"
                else f"{name}={rng.randint(0, 9)}"
                for name, typ in FI_FEATURES)
            engine.handle_line(f"SET FI {pairs}")
            engine.handle_line("RUN FI")
            last["FI"] = engine.handle_line("GET FI FI-ShouldInline")[0]
        # the other model's outputs are untouched
        for other, expected in last.items():
            if other == kind:
                continue
            output = "LU-Count" if other == "LU" else "FI-ShouldInline"
            assert engine.handle_line(f"GET {other} {output}")[0] == expected
