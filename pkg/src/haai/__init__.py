"""Haai: a pure reactive language without functions.

Reactors are deployed into signal graphs that update in glitch-free turns.
"""

from __future__ import annotations

from .engine import Engine, TraceEvent, TurnReport
from .errors import HaaiError, ParseError, RuntimeFault
from .model import POISONED, UNVALUED, Pair
from .stdlib import default_table
from .syntax import parse

__all__ = ["Engine", "TraceEvent", "TurnReport", "HaaiError", "ParseError", "RuntimeFault",
           "POISONED", "UNVALUED", "Pair", "default_table", "parse"]
__version__ = "0.1.0"
