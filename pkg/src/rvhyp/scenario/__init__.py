from .dsl import Directive, ParseError, Scenario, parse, serialize
from .runner import Failure, RunConfig, RunResult, ScenarioRunner, run_scenario

__all__ = ["Directive", "Failure", "ParseError", "RunConfig", "RunResult", "Scenario",
           "ScenarioRunner", "parse", "run_scenario", "serialize"]
