"""Subactions for suspension flows over subshifts of finite type."""

from .sft import TransitionSystem, SymbolicSequence, Cycle, enumerate_cycles, validate
from .suspension import Observable, Profile, RoofFunction, FlowPoint, flow, metric_graph
from .ergopt import minimal_average, verify_certificate
from .subaction import solve_subaction, InfimumSubaction
from .flowext import build_extension, verify_main_theorem
from .mls import mls_compare, rigidity_check

__all__ = [
    "TransitionSystem",
    "SymbolicSequence",
    "Cycle",
    "enumerate_cycles",
    "validate",
    "Observable",
    "Profile",
    "RoofFunction",
    "FlowPoint",
    "flow",
    "metric_graph",
    "minimal_average",
    "verify_certificate",
    "solve_subaction",
    "InfimumSubaction",
    "build_extension",
    "verify_main_theorem",
    "mls_compare",
    "rigidity_check",
]

__version__ = "0.1.0"
