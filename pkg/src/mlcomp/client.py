"""Compiler-side protocol client and the byte-stream transports.

Endpoints are strings:

    inproc            in-process engine (tests, tuner, default CLI serving)
    pipe:/some/path   named-pipe pair /some/path.req + /some/path.resp
    unix:/some/path   unix domain socket

The client is strictly lockstep: one request line, one response line, under a
lock. All transports carry identical bytes, so response transcripts are
transport-independent. Reads time out (default 30 s) so a dead server
surfaces as a transport error instead of a hang.
"""

from __future__ import annotations

import os
import select
import socket
import subprocess
import sys
import threading
import time
from typing import Optional

from .wire import format_number, parse_typed, WireError

CONNECT_TIMEOUT = 10.0
READ_TIMEOUT = 30.0


class TransportError(Exception):
    pass


class ProtocolError(Exception):
    """Server answered ERR (or nonsense) where a value was required."""


def parse_endpoint(endpoint: str) -> tuple[str, str]:
    if endpoint == "inproc":
        return "inproc", ""
    for prefix in ("pipe:", "unix:"):
        if endpoint.startswith(prefix):
            path = endpoint[len(prefix):]
            if not path:
                raise ValueError(f"endpoint '{endpoint}' is missing a path")
            return prefix[:-1], path
    raise ValueError(f"unknown endpoint '{endpoint}' (want inproc, pipe:PATH "
                     f"or unix:PATH)")


class InProcessTransport:
    """Directly drives an InferenceEngine living in this process."""

    def __init__(self, engine):
        self.engine = engine
        self.closed = False

    def send_line(self, line: str) -> None:
        if self.closed:
            raise TransportError("transport closed")
        self._response, server_closed = self.engine.handle_line(line)
        if server_closed:
            self.closed = True

    def recv_line(self) -> str:
        return self._response

    def close(self) -> None:
        self.closed = True


class PipePairTransport:
    """Two unidirectional fifos: requests on .req, responses on .resp."""

    def __init__(self, base_path: str, connect_timeout: float = CONNECT_TIMEOUT,
                 read_timeout: float = READ_TIMEOUT):
        self.read_timeout = read_timeout
        req, resp = pipe_paths(base_path)
        deadline = time.monotonic() + connect_timeout
        if not _wait_for(lambda: os.path.exists(req) and os.path.exists(resp),
                         deadline):
            raise TransportError(f"no server pipes at '{base_path}'")
        self._wfd = None
        while True:
            try:
                # O_NONBLOCK open fails with ENXIO until the server reads
                self._wfd = os.open(req, os.O_WRONLY | os.O_NONBLOCK)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise TransportError(
                        f"timed out connecting to '{base_path}'") from None
                time.sleep(0.02)
        os.set_blocking(self._wfd, True)
        self._rfd = os.open(resp, os.O_RDONLY | os.O_NONBLOCK)
        self._buf = b""
        self.closed = False

    def send_line(self, line: str) -> None:
        try:
            os.write(self._wfd, line.encode("utf-8") + b"\n")
        except OSError as exc:
            raise TransportError(f"pipe write failed: {exc}") from None

    def recv_line(self) -> str:
        return _buffered_read_line(self)

    def _read_some(self, timeout: float) -> bytes:
        ready, _, _ = select.select([self._rfd], [], [], timeout)
        if not ready:
            raise TransportError("read timed out")
        data = os.read(self._rfd, 65536)
        if data == b"":
            raise TransportError("server closed the connection")
        return data

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            for fd in (self._wfd, self._rfd):
                try:
                    os.close(fd)
                except OSError:
                    pass


class SocketTransport:
    def __init__(self, path: str, connect_timeout: float = CONNECT_TIMEOUT,
                 read_timeout: float = READ_TIMEOUT):
        self.read_timeout = read_timeout
        self.sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        deadline = time.monotonic() + connect_timeout
        while True:
            try:
                self.sock.connect(path)
                break
            except OSError:
                if time.monotonic() > deadline:
                    self.sock.close()
                    raise TransportError(
                        f"timed out connecting to '{path}'") from None
                time.sleep(0.02)
        self._buf = b""
        self.closed = False

    def send_line(self, line: str) -> None:
        try:
            self.sock.sendall(line.encode("utf-8") + b"\n")
        except OSError as exc:
            raise TransportError(f"socket write failed: {exc}") from None

    def recv_line(self) -> str:
        return _buffered_read_line(self)

    def _read_some(self, timeout: float) -> bytes:
        self.sock.settimeout(timeout)
        try:
            data = self.sock.recv(65536)
        except socket.timeout:
            raise TransportError("read timed out") from None
        except OSError as exc:
            raise TransportError(f"socket read failed: {exc}") from None
        if data == b"":
            raise TransportError("server closed the connection")
        return data

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            try:
                self.sock.close()
            except OSError:
                pass


def pipe_paths(base_path: str) -> tuple[str, str]:
    return base_path + ".req", base_path + ".resp"


def _wait_for(cond, deadline: float) -> bool:
    while not cond():
        if time.monotonic() > deadline:
            return False
        time.sleep(0.02)
    return True


def _buffered_read_line(transport) -> str:
    deadline = time.monotonic() + transport.read_timeout
    while b"\n" not in transport._buf:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise TransportError("read timed out")
        transport._buf += transport._read_some(remaining)
    line, _, transport._buf = transport._buf.partition(b"\n")
    return line.decode("utf-8")


class AdviceClient:
    """The compiler's half of the protocol; strictly one request in flight."""

    def __init__(self, transport, owned_process: Optional[subprocess.Popen] = None):
        self.transport = transport
        self.process = owned_process
        self.events: list[str] = []            # request verbs, in order
        self.timings: dict[str, float] = {}    # verb -> cumulative seconds
        self.transcript: list[tuple[str, str]] = []
        self.closed = False
        self._lock = threading.Lock()

    def request(self, line: str) -> str:
        if self.closed:
            raise TransportError("client is closed")
        if "\n" in line:
            raise ValueError("request lines must not contain newlines")
        with self._lock:
            start = time.perf_counter()
            self.transport.send_line(line)
            response = self.transport.recv_line()
            elapsed = time.perf_counter() - start
        verb = line.split(" ", 1)[0]
        self.events.append(verb)
        self.timings[verb] = self.timings.get(verb, 0.0) + elapsed
        self.transcript.append((line, response))
        return response

    # -- protocol methods ------------------------------------------------

    def load_model(self, spec_path: str) -> bool:
        if any(c.isspace() for c in spec_path):
            raise ValueError("model spec paths must not contain whitespace")
        return self.request(f"LOAD {spec_path}").startswith("OK")

    def register_model(self, name: str, nfeatures: int, noutputs: int) -> bool:
        return self.request(
            f"REGISTER MODEL {name} {nfeatures} {noutputs}").startswith("OK")

    def register_feature(self, model: str, index: int, name: str, typ: str) -> bool:
        return self.request(
            f"REGISTER FEATURE {model} {index} {name} {typ}").startswith("OK")

    def register_output(self, model: str, name: str, typ: str) -> bool:
        return self.request(f"REGISTER OUTPUT {model} {name} {typ}").startswith("OK")

    def set_custom_features(self, model: str, pairs) -> bool:
        payload = ",".join(f"{name}={format_number(value)}"
                           for name, value in pairs)
        return self.request(f"SET {model} {payload}").startswith("OK")

    def run_model(self, model: str) -> bool:
        return self.request(f"RUN {model}").startswith("OK")

    def get_model_result(self, model: str, output: str, expect: str = "int"):
        response = self.request(f"GET {model} {output}")
        if not response.startswith("OK "):
            raise ProtocolError(response)
        try:
            return parse_typed(response[3:], expect)
        except WireError as exc:
            raise ProtocolError(f"type mismatch for '{output}': {exc}") from None

    def get_status(self) -> int:
        response = self.request("STATUS")
        if not response.startswith("OK "):
            raise ProtocolError(response)
        return int(response[3:])

    def close(self) -> None:
        """Send CLOSE and release the channel; safe to call twice."""
        if self.closed:
            return
        try:
            self.request("CLOSE")
        except (TransportError, ProtocolError):
            pass
        self.closed = True
        self.transport.close()
        if self.process is not None:
            try:
                self.process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.process.kill()
                self.process.wait()


def connect(endpoint: str, engine=None, spawn: bool = False,
            timeout: float = CONNECT_TIMEOUT, model_dir: Optional[str] = None,
            check: bool = True) -> AdviceClient:
    """Connect to a model server, optionally spawning one.

    For `inproc`, an InferenceEngine is used directly (pass one, or one is
    created with base_dir=model_dir). For pipe/unix endpoints, `spawn=True`
    launches `mlcomp serve` as a child process when nothing is listening.
    """
    kind, path = parse_endpoint(endpoint)
    process = None
    if kind == "inproc":
        if engine is None:
            from .server import InferenceEngine
            engine = InferenceEngine(base_dir=model_dir)
        transport = InProcessTransport(engine)
    else:
        if spawn and not _endpoint_live(kind, path):
            argv = [sys.executable, "-m", "mlcomp.cli", "serve",
                    "--endpoint", endpoint]
            if model_dir:
                argv += ["--base-dir", model_dir]
            process = subprocess.Popen(argv, start_new_session=True)
        try:
            if kind == "pipe":
                transport = PipePairTransport(path, connect_timeout=timeout)
            else:
                transport = SocketTransport(path, connect_timeout=timeout)
        except TransportError:
            if process is not None:
                process.kill()
            raise
    client = AdviceClient(transport, owned_process=process)
    if check:
        status = client.get_status()
        if status != 0:
            client.close()
            raise TransportError(f"server not ready (status {status})")
    return client


def _endpoint_live(kind: str, path: str) -> bool:
    if kind == "unix":
        probe = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        try:
            probe.connect(path)
            probe.close()
            return True
        except OSError:
            return False
    req, resp = pipe_paths(path)
    return os.path.exists(req) and os.path.exists(resp)
