"""The model server: spec/weights files, forward pass, protocol state machine.

A model spec (`.acpo`) binds a model name to its feature registry, outputs,
class labels, standardization statistics, and a weights file. The server
keeps loaded models in memory for the whole session; reloading the same spec
path is an instant no-op. One engine instance backs every transport (pipes,
sockets, in-process), so response bytes are transport-independent.

Error message strings are normative (docs/protocol.md): the reference server
must emit them byte for byte.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

from .mlp import argmax, forward_logits, softmax, standardize
from .unroll import derive_decision
from .wire import (VALUE_TYPES, WireError, err, format_typed, ok, parse_typed)

KNOWN_OUTPUTS = {"LU-Type": "int", "LU-Count": "int", "FI-ShouldInline": "bool"}


class SpecError(Exception):
    pass


class WeightsError(Exception):
    pass


@dataclass(frozen=True)
class ModelSpec:
    name: str
    schema_version: int
    features: tuple[tuple[str, str], ...]      # ordered (name, type)
    outputs: tuple[tuple[str, str], ...]       # (name, type)
    classes: tuple[int, ...]
    mean: tuple[float, ...]
    std: tuple[float, ...]
    weights_path: str                          # relative to the spec file

    @property
    def num_features(self) -> int:
        return len(self.features)

    def feature_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.features)


# ---------------------------------------------------------------------------
# file formats


def parse_spec(path: str) -> ModelSpec:
    """Parse and validate a `.acpo` model spec file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise SpecError(f"cannot read '{path}': {exc}") from None
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected key=value")
        key, _, value = line.partition("=")
        if key in pairs:
            raise SpecError(f"line {lineno}: duplicate key '{key}'")
        pairs[key] = value

    def need(key: str) -> str:
        if key not in pairs:
            raise SpecError(f"missing key '{key}'")
        return pairs.pop(key)

    name = need("name")
    if not name or any(c.isspace() for c in name):
        raise SpecError("model name must be non-empty without whitespace")
    try:
        schema = int(need("schema"))
        nfeat = int(need("features"))
    except ValueError as exc:
        raise SpecError(str(exc)) from None
    if nfeat < 1:
        raise SpecError("features count must be >= 1")

    features = []
    for i in range(nfeat):
        decl = need(f"feature.{i}")
        features.append(_parse_decl(decl, f"feature.{i}"))
    names = [n for n, _ in features]
    if len(set(names)) != len(names):
        raise SpecError("duplicate feature names")

    outputs = []
    j = 0
    while f"output.{j}" in pairs:
        outputs.append(_parse_decl(pairs.pop(f"output.{j}"), f"output.{j}"))
        j += 1
    if not outputs:
        raise SpecError("at least one output required")
    for oname, otype in outputs:
        if oname not in KNOWN_OUTPUTS:
            raise SpecError(f"unsupported output '{oname}'")
        if otype != KNOWN_OUTPUTS[oname]:
            raise SpecError(f"output '{oname}' must have type {KNOWN_OUTPUTS[oname]}")
    if len({n for n, _ in outputs}) != len(outputs):
        raise SpecError("duplicate output names")

    try:
        classes = tuple(int(v) for v in need("classes").split(","))
    except ValueError:
        raise SpecError("classes must be comma-separated integers") from None
    if not classes or any(b <= a for a, b in zip(classes, classes[1:])):
        raise SpecError("classes must be strictly increasing")

    mean = _parse_floats(need("standardize.mean"), nfeat, "standardize.mean")
    std = _parse_floats(need("standardize.std"), nfeat, "standardize.std")
    weights_path = need("weights")
    if not weights_path:
        raise SpecError("weights path must be non-empty")
    if pairs:
        raise SpecError(f"unknown key '{sorted(pairs)[0]}'")

    if any(n == "LU-Type" for n, _ in outputs) and "TripCount" not in names:
        raise SpecError("LU-Type output requires a TripCount feature")
    if any(n == "FI-ShouldInline" for n, _ in outputs) and len(classes) != 2:
        raise SpecError("FI-ShouldInline output requires exactly 2 classes")

    return ModelSpec(name=name, schema_version=schema, features=tuple(features),
                     outputs=tuple(outputs), classes=classes, mean=mean,
                     std=std, weights_path=weights_path)


def _parse_decl(decl: str, key: str) -> tuple[str, str]:
    name, sep, typ = decl.partition(":")
    if not sep or not name or typ not in VALUE_TYPES:
        raise SpecError(f"{key}: expected <name>:<type>")
    if any(c.isspace() for c in name) or "," in name or "=" in name:
        raise SpecError(f"{key}: invalid name '{name}'")
    return name, typ


def _parse_floats(text: str, n: int, key: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise SpecError(f"{key}: invalid float") from None
    if len(values) != n:
        raise SpecError(f"{key}: expected {n} values")
    return values


def parse_weights(path: str) -> list:
    """Parse a weights file: ACPOW 1 header, LAYER/BIAS sections."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [line.strip() for line in fh.read().splitlines()]
    except OSError as exc:
        raise WeightsError(f"cannot read '{path}': {exc}") from None
    rows = [line for line in lines if line and not line.startswith("#")]
    if not rows or rows[0] != "ACPOW 1":
        raise WeightsError("missing ACPOW 1 header")
    layers = []
    i = 1
    while i < len(rows):
        parts = rows[i].split()
        if len(parts) != 3 or parts[0] != "LAYER":
            raise WeightsError(f"expected LAYER at line {i + 1}")
        try:
            nrows, ncols = int(parts[1]), int(parts[2])
        except ValueError:
            raise WeightsError(f"bad LAYER dims at line {i + 1}") from None
        if nrows < 1 or ncols < 1:
            raise WeightsError(f"bad LAYER dims at line {i + 1}")
        i += 1
        matrix = []
        for _ in range(nrows):
            if i >= len(rows):
                raise WeightsError("truncated weights matrix")
            matrix.append(_parse_row(rows[i], ncols))
            i += 1
        if i >= len(rows) or rows[i] != "BIAS":
            raise WeightsError("expected BIAS line")
        i += 1
        if i >= len(rows):
            raise WeightsError("truncated bias")
        bias = _parse_row(rows[i], nrows)
        i += 1
        layers.append((matrix, bias))
    if not layers:
        raise WeightsError("no layers")
    return layers


def _parse_row(line: str, n: int) -> list[float]:
    try:
        values = [float(v) for v in line.split()]
    except ValueError:
        raise WeightsError("invalid number in weights") from None
    if len(values) != n:
        raise WeightsError(f"expected {n} values per row")
    return values


def validate_dims(spec: ModelSpec, layers: list) -> None:
    if layers[0] and len(layers[0][0][0]) != spec.num_features:
        raise WeightsError(f"first layer expects {len(layers[0][0][0])} inputs, "
                           f"spec has {spec.num_features} features")
    for i, (matrix, bias) in enumerate(layers):
        if len(bias) != len(matrix):
            raise WeightsError(f"layer {i}: bias length != rows")
        width = len(matrix[0])
        if any(len(row) != width for row in matrix):
            raise WeightsError(f"layer {i}: ragged matrix")
        if i > 0 and width != len(layers[i - 1][0]):
            raise WeightsError(f"layer {i}: input width {width} != previous "
                               f"layer output {len(layers[i - 1][0])}")
    if len(layers[-1][0]) != len(spec.classes):
        raise WeightsError(f"last layer emits {len(layers[-1][0])} logits, "
                           f"spec has {len(spec.classes)} classes")


def write_weights(path: str, layers) -> None:
    out = ["ACPOW 1"]
    for matrix, bias in layers:
        out.append(f"LAYER {len(matrix)} {len(matrix[0])}")
        for row in matrix:
            out.append(" ".join(repr(float(v)) for v in row))
        out.append("BIAS")
        out.append(" ".join(repr(float(v)) for v in bias))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")


def write_spec(path: str, spec: ModelSpec) -> None:
    out = [f"name={spec.name}", f"schema={spec.schema_version}",
           f"features={spec.num_features}"]
    for i, (name, typ) in enumerate(spec.features):
        out.append(f"feature.{i}={name}:{typ}")
    for j, (name, typ) in enumerate(spec.outputs):
        out.append(f"output.{j}={name}:{typ}")
    out.append("classes=" + ",".join(str(int(c)) for c in spec.classes))
    out.append("standardize.mean=" + ",".join(repr(float(v)) for v in spec.mean))
    out.append("standardize.std=" + ",".join(repr(float(v)) for v in spec.std))
    out.append(f"weights={spec.weights_path}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# inference


def mlp_forward(layers, x) -> list[float]:
    """Forward pass returning class probabilities (softmax of the logits)."""
    if layers and len(x) != len(layers[0][0][0]):
        raise WeightsError(f"input has {len(x)} values, model expects "
                           f"{len(layers[0][0][0])}")
    return softmax(forward_logits(layers, x))


def predict(spec: ModelSpec, layers, raw_values) -> dict:
    """Compute every declared output from raw (unstandardized) features."""
    xs = standardize(raw_values, spec.mean, spec.std)
    logits = forward_logits(layers, xs)
    cls = argmax(logits)
    count = spec.classes[cls]
    outputs = {}
    for name, _ in spec.outputs:
        if name == "LU-Count":
            outputs[name] = count
        elif name == "LU-Type":
            trip_raw = raw_values[spec.feature_names().index("TripCount")]
            trip = int(trip_raw) if trip_raw > 0 else None
            outputs[name] = int(derive_decision(count, trip).type)
        elif name == "FI-ShouldInline":
            outputs[name] = logits[1] >= logits[0]
    return outputs


# ---------------------------------------------------------------------------
# protocol engine


@dataclass
class _Model:
    spec: ModelSpec
    layers: Optional[list]          # None for REGISTER-built shells
    path: Optional[str]             # resolved spec path for LOAD idempotence
    buffer: Optional[list] = None   # raw values in registry order
    outputs: Optional[dict] = None
    pending: Optional[dict] = None  # REGISTER bookkeeping


@dataclass
class InferenceEngine:
    """Protocol state machine; one instance serves one session at a time."""
    base_dir: Optional[str] = None
    models: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    loads: int = 0                  # actual spec+weights parses (idempotence)

    def handle_line(self, line: str) -> tuple[str, bool]:
        """Process one request line; returns (response, session_closed)."""
        line = line.rstrip("\n")
        if line == "":
            return err("PARSE", "empty request"), False
        parts = line.split(" ")
        verb = parts[0]
        self.events.append(verb)
        args = parts[1:]
        if verb == "STATUS":
            return (ok(0), False) if not args else \
                (err("PARSE", "malformed STATUS"), False)
        if verb == "CLOSE":
            return (ok(), True) if not args else \
                (err("PARSE", "malformed CLOSE"), False)
        if verb == "LOAD":
            return self._load(args), False
        if verb == "REGISTER":
            return self._register(args), False
        if verb == "SET":
            return self._set(line), False
        if verb == "RUN":
            return self._run(args), False
        if verb == "GET":
            return self._get(args), False
        if verb == "FREE":
            return self._free(args), False
        return err("PARSE", "unknown verb"), False

    # -- verbs ---------------------------------------------------------

    def _load(self, args) -> str:
        if len(args) != 1:
            return err("PARSE", "malformed LOAD")
        path = args[0]
        if self.base_dir and not os.path.isabs(path):
            path = os.path.join(self.base_dir, path)
        path = os.path.abspath(path)
        for model in self.models.values():
            if model.path == path:
                return ok()  # already live: instant no-op
        if not os.path.isfile(path):
            return err("PARSE", "cannot read model spec")
        try:
            spec = parse_spec(path)
        except SpecError:
            return err("PARSE", "invalid model spec")
        wpath = os.path.join(os.path.dirname(path), spec.weights_path)
        if not os.path.isfile(wpath):
            return err("PARSE", "cannot read weights file")
        try:
            layers = parse_weights(wpath)
            validate_dims(spec, layers)
        except WeightsError:
            return err("PARSE", "invalid weights file")
        self.models[spec.name] = _Model(spec=spec, layers=layers, path=path)
        self.loads += 1
        return ok()

    def _register(self, args) -> str:
        if not args:
            return err("PARSE", "malformed REGISTER")
        kind, rest = args[0], args[1:]
        if kind == "MODEL":
            if len(rest) != 3:
                return err("PARSE", "malformed REGISTER")
            name, nf, no = rest
            try:
                nf, no = int(nf), int(no)
            except ValueError:
                return err("PARSE", "malformed REGISTER")
            if nf < 1 or no < 1:
                return err("PARSE", "malformed REGISTER")
            self.models[name] = _Model(
                spec=ModelSpec(name=name, schema_version=0, features=(),
                               outputs=(), classes=(0, 1), mean=(), std=(),
                               weights_path=""),
                layers=None, path=None,
                pending={"nf": nf, "no": no, "features": {}, "outputs": []})
            return ok()
        if kind == "FEATURE":
            if len(rest) != 4:
                return err("PARSE", "malformed REGISTER")
            model_name, idx, name, typ = rest
            model = self.models.get(model_name)
            if model is None or model.pending is None:
                return err("NOMODEL", "unknown model")
            pending = model.pending
            try:
                idx = int(idx)
            except ValueError:
                return err("FEATURE", "invalid feature index")
            if not 0 <= idx < pending["nf"]:
                return err("FEATURE", "invalid feature index")
            if typ not in VALUE_TYPES:
                return err("FEATURE", "invalid feature type")
            if idx in pending["features"] or \
                    any(n == name for n, _ in pending["features"].values()):
                return err("FEATURE", "duplicate feature")
            pending["features"][idx] = (name, typ)
            self._refresh_registered(model)
            return ok()
        if kind == "OUTPUT":
            if len(rest) != 3:
                return err("PARSE", "malformed REGISTER")
            model_name, name, typ = rest
            model = self.models.get(model_name)
            if model is None or model.pending is None:
                return err("NOMODEL", "unknown model")
            pending = model.pending
            if typ not in VALUE_TYPES:
                return err("OUTPUT", "invalid output type")
            if any(n == name for n, _ in pending["outputs"]):
                return err("OUTPUT", "duplicate output")
            if len(pending["outputs"]) >= pending["no"]:
                return err("OUTPUT", "too many outputs")
            pending["outputs"].append((name, typ))
            self._refresh_registered(model)
            return ok()
        return err("PARSE", "malformed REGISTER")

    def _refresh_registered(self, model: _Model) -> None:
        pending = model.pending
        features = tuple(pending["features"][i]
                         for i in sorted(pending["features"]))
        model.spec = ModelSpec(
            name=model.spec.name, schema_version=0, features=features,
            outputs=tuple(pending["outputs"]), classes=(0, 1),
            mean=(0.0,) * len(features), std=(1.0,) * len(features),
            weights_path="")
        model.buffer = None
        model.outputs = None

    def _set(self, line: str) -> str:
        parts = line.split(" ", 2)
        if len(parts) != 3 or not parts[1] or not parts[2]:
            return err("PARSE", "malformed SET")
        model = self.models.get(parts[1])
        if model is None:
            return err("NOMODEL", "unknown model")
        model.buffer = None
        model.outputs = None
        registry = dict(model.spec.features)
        n_expected = model.pending["nf"] if model.pending else model.spec.num_features
        seen = {}
        for pair in parts[2].split(","):
            name, sep, value_text = pair.partition("=")
            if not sep or not name or not value_text or " " in pair:
                return err("FEATURE", "invalid feature assignment")
            if name not in registry:
                return err("FEATURE", f"unknown feature {name}")
            if name in seen:
                return err("FEATURE", f"duplicate feature {name}")
            try:
                seen[name] = parse_typed(value_text, registry[name])
            except WireError:
                return err("FEATURE", f"invalid value for {name}")
        if len(seen) != n_expected:
            return err("FEATURE", f"expected {n_expected} features")
        model.buffer = [float(seen[name]) for name, _ in model.spec.features]
        return ok()

    def _run(self, args) -> str:
        if len(args) != 1:
            return err("PARSE", "malformed RUN")
        model = self.models.get(args[0])
        if model is None:
            return err("NOMODEL", "unknown model")
        if model.buffer is None:
            return err("NOFEATURES", "features not set")
        if model.layers is None:
            return err("INTERNAL", "model has no weights")
        model.outputs = predict(model.spec, model.layers, model.buffer)
        return ok()

    def _get(self, args) -> str:
        if len(args) != 2:
            return err("PARSE", "malformed GET")
        model = self.models.get(args[0])
        if model is None:
            return err("NOMODEL", "unknown model")
        declared = dict(model.spec.outputs)
        name = args[1]
        if name not in declared:
            return err("OUTPUT", f"unknown output {name}")
        if model.outputs is None:
            return err("NOFEATURES", "no results available")
        return ok(format_typed(model.outputs[name], declared[name]))

    def _free(self, args) -> str:
        if len(args) != 1:
            return err("PARSE", "malformed FREE")
        if args[0] not in self.models:
            return err("NOMODEL", "unknown model")
        del self.models[args[0]]
        return ok()


# ---------------------------------------------------------------------------
# endpoint serving


def serve_endpoint(endpoint: str, engine: Optional[InferenceEngine] = None,
                   on_ready=None, log_path: Optional[str] = None) -> InferenceEngine:
    """Serve one endpoint until a CLOSE request arrives.

    Sessions are handled one at a time; a client vanishing without CLOSE ends
    its session but not the server. Engine state (loaded models) persists
    across sessions.
    """
    from .client import parse_endpoint, pipe_paths  # sibling, no cycle at import time

    engine = engine or InferenceEngine()
    kind, path = parse_endpoint(endpoint)
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        if kind == "pipe":
            _serve_pipes(path, engine, on_ready, log, pipe_paths)
        elif kind == "unix":
            _serve_socket(path, engine, on_ready, log)
        else:
            raise ValueError("cannot serve an inproc endpoint")
    finally:
        if log:
            log.close()
    return engine


def _handle(engine: InferenceEngine, line: bytes, log) -> tuple[bytes, bool]:
    text = line.decode("utf-8")
    response, closed = engine.handle_line(text)
    if log:
        log.write(f"> {text}\n< {response}\n")
        log.flush()
    return response.encode("utf-8") + b"\n", closed


def _serve_pipes(path: str, engine, on_ready, log, pipe_paths) -> None:
    req, resp = pipe_paths(path)
    for p in (req, resp):
        try:
            os.mkfifo(p)
        except FileExistsError:
            pass
    if on_ready:
        on_ready()
    closed = False
    try:
        while not closed:
            rfd = os.open(req, os.O_RDONLY)
            wfd = os.open(resp, os.O_WRONLY)
            buf = b""
            try:
                while not closed:
                    data = os.read(rfd, 65536)
                    if data == b"":
                        break  # client went away; await the next session
                    buf += data
                    while b"\n" in buf:
                        line, _, buf = buf.partition(b"\n")
                        out, closed = _handle(engine, line, log)
                        os.write(wfd, out)
                        if closed:
                            break
            finally:
                os.close(rfd)
                os.close(wfd)
    finally:
        for p in (req, resp):
            try:
                os.unlink(p)
            except OSError:
                pass


def _serve_socket(path: str, engine, on_ready, log) -> None:
    import socket

    try:
        os.unlink(path)
    except OSError:
        pass
    listener = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    try:
        listener.bind(path)
        listener.listen(1)
        if on_ready:
            on_ready()
        closed = False
        while not closed:
            conn, _ = listener.accept()
            buf = b""
            try:
                while not closed:
                    data = conn.recv(65536)
                    if data == b"":
                        break
                    buf += data
                    while b"\n" in buf:
                        line, _, buf = buf.partition(b"\n")
                        out, closed = _handle(engine, line, log)
                        conn.sendall(out)
                        if closed:
                            break
            finally:
                conn.close()
    finally:
        listener.close()
        try:
            os.unlink(path)
        except OSError:
            pass
