"""Miniature ML-guided compiler: unroll/inline profitability decisions are
served by models behind a line protocol; includes the autotuner and trainer
that produce those models."""

__version__ = "0.1.0"
