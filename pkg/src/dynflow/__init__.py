"""Numerical toolkit for heat flow, optimal transport, and curvature-flow
certification on discretized time-dependent metric measure spaces."""

__version__ = "0.1.0"

from . import certify, entflow, mmspace, operators, propagate, scenarios, transport  # noqa: F401,E402
