"""Python front end for the fedshadow C++ core.

Configs, runs, signatures and reports are plain dicts in the same JSON shape
the run store and the HTTP API use.
"""

import json

from . import _core
from ._core import (
    AnalysisError,
    ConfigError,
    FedshadowError,
    LoadError,
    NotFoundError,
    StorageError,
    density_ratio,
    separability_score,
)

__all__ = [
    "AnalysisError",
    "ConfigError",
    "FedshadowError",
    "LoadError",
    "NotFoundError",
    "StorageError",
    "advise",
    "analyze_run",
    "default_config",
    "density_ratio",
    "list_runs",
    "load_run",
    "params_digest",
    "pca_project",
    "run_federation",
    "scenario",
    "scenarios",
    "separability_score",
    "simulate_to_store",
    "validate_config",
]


def default_config():
    return json.loads(_core.default_config())


def validate_config(config):
    """List of (field, message) problems; empty when the config is valid."""
    return _core.validate_config(json.dumps(config))


def scenarios():
    return json.loads(_core.scenarios())


def scenario(name):
    for entry in scenarios():
        if entry["name"] == name:
            return entry["config"]
    raise KeyError(name)


def run_federation(config, threads=1):
    return json.loads(_core.run_federation(json.dumps(config), threads))


def simulate_to_store(config, root, run_id="", threads=1):
    return _core.simulate_to_store(json.dumps(config), str(root), run_id, threads)


def load_run(root, run_id):
    return json.loads(_core.load_run(str(root), run_id))


def list_runs(root):
    return json.loads(_core.list_runs(str(root)))


def analyze_run(run):
    return json.loads(_core.analyze_run(json.dumps(run)))


def advise(run, signatures, f1_drop=0.15, signature_fraction=0.5, separability_gate=0.5):
    """Returns (report dict, rendered text)."""
    report, text = _core.advise(json.dumps(run), json.dumps(signatures), f1_drop, signature_fraction,
                                separability_gate)
    return json.loads(report), text


def pca_project(vectors, n_components=3):
    """Returns (projections, components, explained_variance)."""
    return _core.pca_project([list(map(float, v)) for v in vectors], n_components)


def params_digest(params):
    return _core.params_digest(json.dumps(params))
