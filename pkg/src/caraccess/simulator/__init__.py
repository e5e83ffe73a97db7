"""Deterministic multi-party simulator with a network adversary."""

from .battery import base_scenario, battery_scenarios, leak_scenario, run_battery
from .knowledge import AdversaryKnowledge, adversary_closure
from .run import SimResult, Simulation, Verdict, sim_run
from .scenario import ChannelSpec, Goal, Scenario, ScenarioError, Strategy, parse_scenario
