"""Vectorial total variation denoising and flow for 1D signals.

Certified ROF solves, a smoothed Newton solver, the flow by iterated
resolvents, and randomized suites checking the local jump estimates.
"""

from vtv1d.flow import FlowParams, Trajectory, evolve, verify_corollary
from vtv1d.properties import PropertyReport, SuiteConfig, run_suite
from vtv1d.prox_vtv import ProxParams, SolveReport, prox, taut_string_scalar
from vtv1d.signal_core import Grid, Signal, Window, generate, load_signal, save_signal, tv
from vtv1d.smoothed_solver import SmoothParams, SmoothReport, minimize_smoothed

__version__ = "0.1.0"

__all__ = [
    "Grid",
    "Signal",
    "Window",
    "generate",
    "load_signal",
    "save_signal",
    "tv",
    "ProxParams",
    "SolveReport",
    "prox",
    "taut_string_scalar",
    "SmoothParams",
    "SmoothReport",
    "minimize_smoothed",
    "FlowParams",
    "Trajectory",
    "evolve",
    "verify_corollary",
    "SuiteConfig",
    "PropertyReport",
    "run_suite",
]
