"""JSON schemas, instance files and experiment configuration."""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .model import ProblemInstance


class ConfigError(ValueError):
    """Raised when a config or instance document fails schema validation."""


DEFAULT_CONFIG = {
    "seed": 0,
    "out_dir": "results",
    "solver": "central",
    "mode": "joint",
    "scenario": {
        "instance": None,
        "rates_csv": None,
        "num_cells": 10,
        "period": "peak",
        "bandwidth_hz": 60e6,
        "fog_power_per_node": 10000.0,
        "confidence": 0.9,
        "min_slice_bandwidth_hz": 1e3,
        "rate_scale": 1.0,
    },
    "admm": {"rho": 1.0, "max_iter": 500, "balance": False, "eps_primal": None,
             "eps_dual": None},
    "async": {"alpha": 0.5, "tau": 5, "staleness": "uniform", "tol": None,
              "max_updates": None},
    "timing": {"mean_compute": None, "mean": 1.0, "slow": [0], "factor": 10.0,
               "uplink": 0.0, "downlink": 0.0, "deterministic": False},
    "race": {"seeds": list(range(10)), "rel_tol": 1e-3, "max_iter": 120,
             "max_updates": 3000},
    "naive": {"seeds": list(range(10)), "perturbation": 1e-3, "max_updates": 200,
              "async_max_updates": 20000},
}


def load_schema(name: str) -> dict:
    """Shipped schema by short name (``"instance"`` or ``"config"``)."""
    text = resources.files("fedslice").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _validate(doc, name: str, what: str) -> None:
    validator = jsonschema.Draft202012Validator(load_schema(name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{what}: {where}: {e.message}")


def validate_instance(doc: dict) -> None:
    _validate(doc, "instance", "instance")


def validate_config(doc: dict) -> None:
    _validate(doc, "config", "config")


def load_instance(path) -> ProblemInstance:
    doc = json.loads(Path(path).read_text())
    validate_instance(doc)
    return ProblemInstance.from_dict(doc)


def save_instance(instance: ProblemInstance, path) -> Path:
    doc = instance.to_dict()
    validate_instance(doc)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2))
    return path


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides: Optional[dict] = None) -> dict:
    """Defaults, then the config file, then ``overrides``; each layer is validated.

    Relative ``scenario.instance`` and ``scenario.rates_csv`` paths are resolved
    against the config file's directory.
    """
    doc: dict = {}
    if path is not None:
        path = Path(path)
        doc = json.loads(path.read_text())
        validate_config(doc)
        for key in ("instance", "rates_csv"):
            ref = doc.get("scenario", {}).get(key)
            if ref and not Path(ref).is_absolute():
                doc["scenario"][key] = str(path.parent / ref)
    cfg = _merge(DEFAULT_CONFIG, doc)
    if overrides:
        cfg = _merge(cfg, {k: v for k, v in overrides.items() if v is not None})
    validate_config(cfg)
    return cfg
