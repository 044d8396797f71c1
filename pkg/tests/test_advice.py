import pytest

from mlcomp.advice import AdviceError, ModelHandle
from mlcomp.client import AdviceClient, InProcessTransport
from mlcomp.features import FI_FEATURES, LU_FEATURES, FeatureVector
from mlcomp.server import InferenceEngine

from conftest import REPO_ROOT

LU_SPEC = "conformance/models/fixture-lu.acpo"
FI_SPEC = "conformance/models/fixture-fi.acpo"


def lu_vector(offset=0):
    return FeatureVector(kind="LU", values=tuple(
        (name, float(i + offset) if typ == "float" else i + offset)
        for i, (name, typ) in enumerate(LU_FEATURES)))


def fi_vector():
    return FeatureVector(kind="FI", values=tuple(
        (name, float(i) if typ == "float" else i)
        for i, (name, typ) in enumerate(FI_FEATURES)))


def make_client(engine=None):
    return AdviceClient(InProcessTransport(
        engine or InferenceEngine(base_dir=REPO_ROOT)))


def test_handles_expect_schema_sizes():
    client = make_client()
    lu = ModelHandle("LU", client, LU_SPEC)
    fi = ModelHandle("FI", client, FI_SPEC)
    assert lu.expected_features == 30
    assert fi.expected_features == 13


def test_kind_mismatch_rejected():
    client = make_client()
    handle = ModelHandle("LU", client, LU_SPEC)
    with pytest.raises(AdviceError, match="LU handle got a FI"):
        handle.set_custom_features(fi_vector())


def test_get_advice_full_flow_and_protocol_order():
    engine = InferenceEngine(base_dir=REPO_ROOT)
    client = make_client(engine)
    handle = ModelHandle("LU", client, LU_SPEC)
    handle.set_custom_features(lu_vector())
    advice = handle.get_advice()
    assert advice.present
    assert set(advice.fields) == {"LU-Type", "LU-Count"}
    assert isinstance(advice["LU-Count"], int)
    assert client.events == ["LOAD", "SET", "RUN", "GET", "GET"]


def test_handle_reuse_loads_once():
    engine = InferenceEngine(base_dir=REPO_ROOT)
    client = make_client(engine)
    handle = ModelHandle("LU", client, LU_SPEC)
    for k in range(4):
        handle.set_custom_features(lu_vector(k))
        assert handle.get_advice().present
    assert client.events.count("LOAD") == 1
    assert client.events.count("RUN") == 4
    assert engine.loads == 1


def test_two_handles_share_one_connection():
    engine = InferenceEngine(base_dir=REPO_ROOT)
    client = make_client(engine)
    lu = ModelHandle("LU", client, LU_SPEC)
    fi = ModelHandle("FI", client, FI_SPEC)
    lu.set_custom_features(lu_vector())
    fi.set_custom_features(fi_vector())
    assert lu.get_advice().present
    assert fi.get_advice().present
    assert lu.client is fi.client
    assert set(engine.models) == {"LU", "FI"}


def test_set_replaces_previous_features():
    engine = InferenceEngine(base_dir=REPO_ROOT)
    client = make_client(engine)
    handle = ModelHandle("LU", client, LU_SPEC)
    handle.set_custom_features(lu_vector(0))
    handle.get_advice()
    handle.set_custom_features(lu_vector(9))
    handle.get_advice()
    sets = [req for req, _ in client.transcript if req.startswith("SET ")]
    assert len(sets) == 2 and sets[0] != sets[1]
    # second SET payload fully replaced the buffer
    expected = [float(v) for _, v in lu_vector(9).values]
    assert engine.models["LU"].buffer == expected


def test_advice_absent_on_missing_model_file():
    client = make_client()
    handle = ModelHandle("LU", client, "conformance/models/nope.acpo")
    handle.set_custom_features(lu_vector())
    advice = handle.get_advice()
    assert not advice.present
    assert handle.last_error == "model load failed"
    with pytest.raises(AdviceError):
        advice["LU-Count"]


def test_advice_absent_on_run_failure_is_all_or_nothing():
    class FailingRun(InferenceEngine):
        def handle_line(self, line):
            if line.startswith("RUN "):
                return "ERR INTERNAL forced failure", False
            return super().handle_line(line)

    client = make_client(FailingRun(base_dir=REPO_ROOT))
    handle = ModelHandle("LU", client, LU_SPEC)
    handle.set_custom_features(lu_vector())
    advice = handle.get_advice()
    assert not advice.present and advice.fields == {}
    assert "run failed" in handle.last_error


def test_add_feature_mutates_single_entry():
    client = make_client()
    handle = ModelHandle("LU", client, LU_SPEC)
    handle.set_custom_features(lu_vector())
    handle.add_feature("TripCount", 99)
    assert handle.features.get("TripCount") == 99
    with pytest.raises(AdviceError, match="unknown feature"):
        handle.add_feature("Nope", 1)


def test_get_advice_requires_features():
    client = make_client()
    handle = ModelHandle("LU", client, LU_SPEC)
    with pytest.raises(AdviceError, match="features not set"):
        handle.get_advice()
