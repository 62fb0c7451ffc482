"""Oxide: a flow-sensitive borrow checker with an instrumented small-step
interpreter and executable progress, preservation and erasure probes."""

from oxide.ast import pretty, pretty_program
from oxide.parser import Diagnostic, OxideError, parse_program
from oxide.typeck import CheckOutcome, check_program, type_check
from oxide.interp import eval, run, step

__all__ = [
    "CheckOutcome", "Diagnostic", "OxideError", "check_program", "eval", "parse_program", "pretty", "pretty_program",
    "run", "step",
    "type_check",
]
__version__ = "0.1.0"
