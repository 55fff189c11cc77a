"""Interpreter and analysis toolkit for a hybrid process calculus of
cyber-physical systems and attacks on their sensors and actuators."""

from .intervals import Interval
from .model import (
    Action,
    AttackClass,
    Environment,
    SlotSet,
    SystemConfig,
    check_inv,
    check_safe,
    compose_attack,
    next_interval,
    next_sample,
    read_sensor,
    update_act,
    well_formed,
    widen_uncertainty,
)
from .process import is_honest, check_time_guarded
from .lang import ModelFile, parse_model, parse_model_file, print_model
from .lts import (
    ExplorationBudget,
    enumerate_bounded,
    process_steps,
    run_sampled,
    system_steps,
)

__all__ = [
    "Action",
    "AttackClass",
    "Environment",
    "ExplorationBudget",
    "Interval",
    "ModelFile",
    "SlotSet",
    "SystemConfig",
    "check_inv",
    "check_safe",
    "check_time_guarded",
    "compose_attack",
    "enumerate_bounded",
    "is_honest",
    "next_interval",
    "next_sample",
    "parse_model",
    "parse_model_file",
    "print_model",
    "process_steps",
    "read_sensor",
    "run_sampled",
    "system_steps",
    "update_act",
    "well_formed",
    "widen_uncertainty",
]
