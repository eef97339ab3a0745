"""Deterministic scenario harness: scripted agents on a logical clock."""

from .report import RunReport, assert_outcome
from .scenario import (
    Expectation,
    Rule,
    RuleBook,
    Scenario,
    ScriptedAgent,
    load_scenario,
    parse_scenario,
)
from .sim import LogicalClock, Simulation, run_scenario

__all__ = [
    "Expectation",
    "LogicalClock",
    "Rule",
    "RuleBook",
    "RunReport",
    "Scenario",
    "ScriptedAgent",
    "Simulation",
    "assert_outcome",
    "load_scenario",
    "parse_scenario",
    "run_scenario",
]
