"""Experiment configuration: schema, defaults and loading."""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_GRID = {"type": "array", "items": _NUM}
_POS_GRID = {"type": "array", "items": _POS}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


CZ_PARAMS = _obj(
    {
        "A_q1_mhz": _NUM,
        "A_q2_mhz": _NUM,
        "A_c1_mhz": _NUM,
        "A_c2_mhz": _NUM,
        "sigma_c": _POS,
    },
    required=("A_q1_mhz", "A_q2_mhz", "A_c1_mhz", "A_c2_mhz", "sigma_c"),
)

SCHEMA = _obj(
    {
        "system": _obj(
            {
                "n_qubits": {"type": "integer", "minimum": 1, "maximum": 6},
                "levels": {"type": "integer", "minimum": 2},
                "mode_levels": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 2}},
                "max_excitations": {"type": ["integer", "null"], "minimum": 1},
                "idle_ghz": {"type": "object", "additionalProperties": _POS},
            }
        ),
        "schedule": _obj(
            {
                "tau": _POS,
                "sigma_q": _POS,
                "sigma_c": _POS,
                "params": {"oneOf": [{"type": "null"}, CZ_PARAMS]},
            }
        ),
        "noise": _obj(
            {
                "T1_us": _POS,
                "T2star_us": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "temperature_mK": _NONNEG,
            }
        ),
        "solver": _obj(
            {
                "dt": _POS,
                "optimize_dt": _POS,
                "optimize_max_excitations": {"type": ["integer", "null"], "minimum": 1},
                "driven_dt": _POS,
                "krylov_dim": {"type": "integer", "minimum": 2},
                "krylov_tol": _POS,
            }
        ),
        "experiment": _obj(
            {
                "calibrate": _obj(
                    {
                        "search": {"type": "boolean"},
                        "coupler_window_ghz": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2},
                        "n_scan": {"type": "integer", "minimum": 3},
                        "landscape_points": {"type": "integer", "minimum": 1},
                    }
                ),
                "cz": _obj(
                    {
                        "objective": {"enum": ["state", "average"]},
                        "max_evals": {"type": "integer", "minimum": 1},
                        "target": _POS,
                        "n_snapshots": {"type": "integer", "minimum": 2},
                    }
                ),
                "sqg": _obj(
                    {
                        "omega_q1_ghz": _POS_GRID,
                        "variants": {
                            "type": "array",
                            "items": {"enum": ["undisturbed", "parallel-q2", "drive-center", "excited-center"]},
                        },
                        "theta": _NUM,
                        "duration": _POS,
                        "width": _POS,
                        "freq_tol_mhz": _POS,
                        "amp_tol": _POS,
                        "max_excitations": {"type": ["integer", "null"], "minimum": 1},
                    }
                ),
                "decoherence": _obj(
                    {
                        "T1_us": _POS_GRID,
                        "routes": {"type": "array", "items": {"enum": ["lindblad", "perturbative"]}},
                    }
                ),
                "spectators": _obj(
                    {
                        "n_qubits": {"type": "array", "items": {"type": "integer", "minimum": 2, "maximum": 6}},
                        "sigma_c": _POS_GRID,
                        "max_evals": {"type": "integer", "minimum": 1},
                        "levels": {"type": "integer", "minimum": 2},
                        "max_excitations": {"type": ["integer", "null"], "minimum": 1},
                    }
                ),
                "occupations": _obj(
                    {
                        "n_qubits": {"type": "integer", "minimum": 1, "maximum": 6},
                        "levels": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 2}},
                        "max_excitations": {"type": ["integer", "null"], "minimum": 1},
                    }
                ),
                "pulse": _obj({"n_points": {"type": "integer", "minimum": 2}}),
            }
        ),
        "output": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
    }
)

DEFAULTS: dict[str, Any] = {
    "system": {"n_qubits": 2, "levels": 3, "mode_levels": {}, "max_excitations": None, "idle_ghz": {}},
    "schedule": {"tau": 60.0, "sigma_q": 1.0, "sigma_c": 3.0, "params": None},
    "noise": {"T1_us": 20.0, "T2star_us": None, "temperature_mK": 0.0},
    "solver": {
        "dt": 0.02,
        "optimize_dt": 0.05,
        "optimize_max_excitations": 4,
        "driven_dt": 0.002,
        "krylov_dim": 30,
        "krylov_tol": 1e-10,
    },
    "experiment": {
        "calibrate": {"search": False, "coupler_window_ghz": [3.3, 4.0], "n_scan": 41, "landscape_points": 15},
        "cz": {"objective": "state", "max_evals": 600, "target": 1e-7, "n_snapshots": 121},
        "sqg": {
            "omega_q1_ghz": [4.85, 4.88, 4.9, 4.95, 5.0],
            "variants": ["undisturbed"],
            "theta": 3.141592653589793,
            "duration": 20.0,
            "width": 4.0,
            "freq_tol_mhz": 0.01,
            "amp_tol": 3e-4,
            "max_excitations": 4,
        },
        "decoherence": {"T1_us": [5.0, 10.0, 20.0, 50.0, 100.0], "routes": ["lindblad", "perturbative"]},
        "spectators": {"n_qubits": [2, 3, 4], "sigma_c": [3.0], "max_evals": 600, "levels": 3, "max_excitations": 4},
        "occupations": {"n_qubits": 3, "levels": {}, "max_excitations": None},
        "pulse": {"n_points": 601},
    },
    "output": "out",
    "seed": 0,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("idle_ghz", "levels", "mode_levels"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg: dict) -> None:
    """Raise :class:`ConfigError` naming the offending field path."""
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config field {path}: {exc.message}") from None


def resolve(raw: dict | None = None) -> dict:
    """Validate ``raw`` and fill in defaults."""
    raw = raw or {}
    validate(raw)
    cfg = _merge(DEFAULTS, raw)
    validate(cfg)
    return cfg


def load(path: str | Path | None = None) -> dict:
    """Read a JSON config (the bundled config when ``path`` is None)."""
    if path is None:
        text = resources.files("mmcoupler.data").joinpath("table1.json").read_text()
    else:
        text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return resolve(raw)


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
