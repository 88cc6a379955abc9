"""Python access to the V2G attack testbed.

Configs are plain dicts in the same layout as the CLI's JSON config files.
"""

import json

from ._core import (
    AssignmentInfeasible,
    ConfigError,
    ContractViolation,
    Error,
    IoError,
    PhysicsViolation,
    UndefinedMetric,
    agc_event,
    quantize_soc,
    solve_transportation,
    step_ev,
)
from . import _core

__all__ = [
    "AssignmentInfeasible",
    "ConfigError",
    "ContractViolation",
    "Error",
    "IoError",
    "PhysicsViolation",
    "UndefinedMetric",
    "agc_event",
    "config_hash",
    "default_config",
    "export",
    "normalize_config",
    "quantize_soc",
    "run",
    "solve_transportation",
    "step_ev",
]


def _dump(config):
    return json.dumps(config or {})


def default_config():
    return json.loads(_core.default_config())


def normalize_config(config=None):
    return json.loads(_core.normalize_config(_dump(config)))


def config_hash(config=None):
    return _core.config_hash(_dump(config))


def run(config=None):
    return _core.run(_dump(config))


def export(config, out_dir):
    _core.run_and_export(_dump(config), str(out_dir))
