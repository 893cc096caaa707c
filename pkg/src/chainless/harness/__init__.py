"""Scenario runner: config loading, the simulation clock and the CLI."""

from .scenario import Scenario, bundled_scenario, load_scenario, parse_scenario
from .sim import RunReport, Simulation, compare_trust_models, format_comparison, run_scenario
from .trace import TraceVerdict, verify_trace

__all__ = [
    "RunReport", "Scenario", "Simulation", "TraceVerdict", "bundled_scenario", "compare_trust_models",
    "format_comparison", "load_scenario", "parse_scenario", "run_scenario", "verify_trace",
]
