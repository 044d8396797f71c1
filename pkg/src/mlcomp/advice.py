"""Per-pass model handles: gather features, run one inference, return advice.

A handle binds a model kind (LU or FI) to the shared protocol client. The
first get_advice() sends LOAD; later ones skip it, so a handle reused for K
inferences produces exactly one LOAD and K RUN wire events. Advice is
all-or-nothing: every required field arrives with its declared type, or the
advice is absent and `last_error` says why.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .client import AdviceClient, ProtocolError, TransportError
from .features import SCHEMAS, FeatureVector

ADVICE_FIELDS = {
    "LU": (("LU-Type", "int"), ("LU-Count", "int")),
    "FI": (("FI-ShouldInline", "bool"),),
}


class AdviceError(Exception):
    pass


@dataclass
class Advice:
    present: bool
    fields: dict = field(default_factory=dict)

    def __getitem__(self, name: str):
        if not self.present:
            raise AdviceError("advice is absent")
        return self.fields[name]


ABSENT = Advice(present=False)


class ModelHandle:
    def __init__(self, kind: str, client: AdviceClient, spec_path: str):
        if kind not in ADVICE_FIELDS:
            raise AdviceError(f"unknown model kind '{kind}'")
        self.kind = kind
        self.model_name = kind
        self.client = client
        self.spec_path = spec_path
        self.features: Optional[FeatureVector] = None
        self.loaded = False
        self.last_error: Optional[str] = None

    @property
    def expected_features(self) -> int:
        return len(SCHEMAS[self.kind])

    def set_custom_features(self, fv: FeatureVector) -> None:
        if fv.kind != self.kind:
            raise AdviceError(f"{self.kind} handle got a {fv.kind} vector")
        self.features = fv

    def add_feature(self, name: str, value) -> None:
        """Mutate one feature in place. Prefer set_custom_features; this
        exists for API parity and requires a full vector to already be set."""
        if self.features is None:
            raise AdviceError("no feature vector to mutate")
        values = tuple((n, value if n == name else v)
                       for n, v in self.features.values)
        if not any(n == name for n, _ in values):
            raise AdviceError(f"unknown feature '{name}'")
        self.features = FeatureVector(kind=self.kind, values=values)

    def get_advice(self) -> Advice:
        """LOAD (once) -> SET -> RUN -> GET each required field."""
        if self.features is None:
            raise AdviceError("features not set")
        try:
            if not self.loaded:
                if not self.client.load_model(self.spec_path):
                    self.last_error = "model load failed"
                    return ABSENT
                self.loaded = True
            if not self.client.set_custom_features(self.model_name,
                                                   self.features.values):
                self.last_error = "feature transfer rejected"
                return ABSENT
            if not self.client.run_model(self.model_name):
                self.last_error = "inference run failed"
                return ABSENT
            fields = {}
            for name, typ in ADVICE_FIELDS[self.kind]:
                fields[name] = self.client.get_model_result(
                    self.model_name, name, expect=typ)
        except (TransportError, ProtocolError) as exc:
            self.last_error = str(exc)
            return ABSENT
        self.last_error = None
        return Advice(present=True, fields=fields)
