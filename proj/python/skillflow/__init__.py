"""Capability-based process execution: registry, process model, skill
resolution, engine and a virtual plant, backed by a C++ core."""

from ._core import (
    BindingPlan,
    Engine,
    PendingDecisions,
    Process,
    Registry,
    Server,
    SkillflowError,
    VirtualModule,
    apply_command,
    complete_acting,
    decide,
    evaluate,
    is_acting,
    load_plant,
    load_registry,
    parse_process,
    render_template,
    resolve,
    validate_plan,
)

__version__ = "0.1.0"

__all__ = [
    "BindingPlan",
    "Engine",
    "PendingDecisions",
    "Process",
    "Registry",
    "Server",
    "SkillflowError",
    "VirtualModule",
    "apply_command",
    "complete_acting",
    "decide",
    "evaluate",
    "is_acting",
    "load_plant",
    "load_registry",
    "parse_process",
    "render_template",
    "resolve",
    "validate_plan",
]
