"""Must-crash analysis for a small first-order functional language.

Programs are translated to pattern-matching recursion schemes (`pmrs`) that
model their outputs, and to context-aware tree automata (`carta`) that model
the inputs each function survives.  `checker` combines both to find calls
whose argument always makes the callee crash.
"""

from .carta import Carta, Transition, accepts, build_carta, build_carta_step1, call_equivalence, merge_carta, minimize
from .checker import AnalysisConfig, ErrorReport, Finding, analyze_program, bounded_verify, emit_report
from .frontend import CoreProgram, Diagnostic, ParseError, load, parse, preprocess
from .interpreter import Err, FuelExhausted, Value, call, run_main
from .pmrs import Pmrs, Rule, evaluate, to_pmrs
from .terms import Position, RankedAlphabet, Sym, Var, parse_term, peano, render

__version__ = "0.1.0"

__all__ = [
    "AnalysisConfig", "Carta", "CoreProgram", "Diagnostic", "Err", "ErrorReport", "Finding",
    "FuelExhausted", "ParseError", "Pmrs", "Position", "RankedAlphabet", "Rule", "Sym", "Transition",
    "Value", "Var", "accepts", "analyze_program", "bounded_verify", "build_carta", "build_carta_step1",
    "call", "call_equivalence", "emit_report", "evaluate", "load", "merge_carta", "minimize", "parse",
    "parse_term", "peano", "preprocess", "render", "run_main", "to_pmrs",
]
