"""Drone delivery planning under cellular-connectivity constraints."""

from .arc_metrics import MetricMatrix, build_metric_matrix
from .comm_model import CommNetwork, CommParams
from .exact import EnumerationBounds, enumerate_optimal, export_mps, verify_against_mps
from .ga_solver import GAConfig, decode
from .ga_solver import run as run_ga
from .instance import (GeneratorConfig, Instance, generate_instance, illustrative_instance,
                       load_instance, save_instance)
from .solution import Plan, Trip, check_feasibility, load_plan, save_plan

__all__ = [
    "CommNetwork", "CommParams", "EnumerationBounds", "GAConfig", "GeneratorConfig", "Instance",
    "MetricMatrix", "Plan", "Trip", "build_metric_matrix", "check_feasibility", "decode",
    "enumerate_optimal", "export_mps", "generate_instance", "illustrative_instance",
    "load_instance", "load_plan", "run_ga", "save_instance", "save_plan", "verify_against_mps",
]
