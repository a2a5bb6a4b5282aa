"""Deterministic separation-kernel partitioning simulator.

The heavy lifting lives in the C++ core; this package re-exports the main
operations: scenario loading, simulation runs, trace export, and the
admission/window/isolation/trap/pci checks.
"""

from ._core import (
    EngineError,
    ParseError,
    Scenario,
    Trace,
    ValidationError,
    admission_check,
    admission_report,
    ept_footprint,
    isolation_report,
    liu_layland_bound,
    load_scenario,
    load_trace,
    pci_decode,
    pci_report,
    run,
    scenario_from_json,
    trace_from_json,
    trap_report,
    window_report,
)

__all__ = [
    "EngineError",
    "ParseError",
    "Scenario",
    "Trace",
    "ValidationError",
    "admission_check",
    "admission_report",
    "ept_footprint",
    "isolation_report",
    "liu_layland_bound",
    "load_scenario",
    "load_trace",
    "pci_decode",
    "pci_report",
    "run",
    "scenario_from_json",
    "trace_from_json",
    "trap_report",
    "window_report",
]

__version__ = "0.1.0"
