"""Reference MLP kernel shared by the server and the trainer's predict path.

Plain sequential double-precision arithmetic in a pinned evaluation order:
per output unit, acc starts at the bias and accumulates w*x left to right;
ReLU between layers; softmax subtracts the max before exponentiating. The
reference server reproduces this order operation for operation, which makes
class-level outputs bit-identical across implementations (argmax and the
two-class threshold depend only on exactly-computed logits, not on exp()).
"""

from __future__ import annotations

import math
from operator import mul

Layers = list  # [(weights: list[list[float]], bias: list[float]), ...]


def forward_logits(layers: Layers, x) -> list[float]:
    a = list(x)
    last = len(layers) - 1
    for li, (weights, bias) in enumerate(layers):
        out = [sum(map(mul, row, a), start=b) for row, b in zip(weights, bias)]
        if li != last:
            out = [v if v > 0.0 else 0.0 for v in out]
        a = out
    return a


def softmax(logits) -> list[float]:
    m = max(logits)
    exps = [math.exp(v - m) for v in logits]
    total = sum(exps)
    return [e / total for e in exps]


def standardize(raw, mean, std) -> list[float]:
    return [(v - m) / (s if s != 0.0 else 1.0)
            for v, m, s in zip(raw, mean, std)]


def argmax(values) -> int:
    """Index of the maximum; first index wins ties."""
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best]:
            best = i
    return best
