"""Oscillatory integrals with trace phases over algebraic number fields."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .numberfield import NumberField, build_field, decompose, field_from_spec, mult_matrix, trace_form  # noqa: E402
from .phases import TracePolynomial, eval_phase, eval_phase_embedded, grad_phase, univariate  # noqa: E402
