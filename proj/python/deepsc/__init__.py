"""Deep 2BSDE and SMP solvers for constrained utility maximisation.

Configurations and result records are plain dicts with the same layout as
the JSON files the command-line tool reads and writes.
"""

import json

from . import _deepsc
from ._deepsc import (
    brownian_increments,
    dual_utility,
    heston_riccati_value,
    loglog_slope,
    preset_names,
    project,
    utility,
)

__all__ = [
    "brownian_increments",
    "convergence_study",
    "dual_utility",
    "emit_results",
    "heston_riccati_value",
    "loglog_slope",
    "methodology_sweep",
    "nonhara_solution",
    "oracle",
    "preset",
    "preset_names",
    "project",
    "run_experiment",
    "utility",
    "validate_config",
]


def preset(name, full=False):
    return json.loads(_deepsc.preset(name, full))


def validate_config(config):
    """Returns the effective config with defaults filled; raises ValueError."""
    return json.loads(_deepsc.validate_config(json.dumps(config)))


def oracle(config):
    out = _deepsc.oracle(json.dumps(config))
    return None if out is None else json.loads(out)


def run_experiment(config):
    return json.loads(_deepsc.run_experiment(json.dumps(config)))


def convergence_study(config):
    return json.loads(_deepsc.convergence_study(json.dumps(config)))


def methodology_sweep(config):
    return json.loads(_deepsc.methodology_sweep(json.dumps(config)))


def emit_results(records, out_dir):
    return _deepsc.emit_results(json.dumps(records), str(out_dir))


def nonhara_solution(r, theta_sq, x0, T):
    return json.loads(_deepsc.nonhara_solution(r, theta_sq, x0, T))
