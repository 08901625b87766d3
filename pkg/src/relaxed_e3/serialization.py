"""On-disk formats: network config (YAML), checkpoints and result files (JSON), tables (CSV).

Every JSON file is validated against its schema before writing and read
back afterwards; a file that does not round-trip raises :class:`OutputError`.

Checkpoint layout::

    {"format": "relaxed-e3-checkpoint", "version": 1,
     "spec": {... same mapping as the YAML config ...},
     "params": {"layers.0.theta": {"shape": [50], "layout": "1x0e+...", "values": [...]}, ...},
     "train": {... TrainConfig ...} | null,
     "history": [...]}
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
import yaml

from .network import GateSpec, LayerSpec, NetworkSpec, Params

CHECKPOINT_FORMAT = "relaxed-e3-checkpoint"
CHECKPOINT_VERSION = 1


class OutputError(RuntimeError):
    """A result file failed validation or did not read back identically."""


class CheckpointError(ValueError):
    pass


# -- network spec -----------------------------------------------------------

_LAYER_FIELDS = ("irreps_in", "irreps_out", "filter_lmax", "relaxed", "irreps_attr", "irreps_fused",
                 "radial_basis", "radial_hidden", "r_max", "relaxed_trainable")


def spec_to_dict(spec: NetworkSpec) -> dict:
    layers = []
    for layer in spec.layers:
        entry = {}
        for name in _LAYER_FIELDS:
            value = getattr(layer, name)
            entry[name] = str(value) if hasattr(value, "entries") else value
        layers.append(entry)
    gates = [{"num_scalars": g.num_scalars, "gated": str(g.gated)} for g in spec.gates]
    return {"layers": layers, "gates": gates}


def spec_from_dict(data: dict) -> NetworkSpec:
    try:
        validate(data, "spec")
        layers = [LayerSpec(**{k: v for k, v in entry.items() if k in _LAYER_FIELDS}) for entry in data["layers"]]
        gates = [GateSpec(g["num_scalars"], g["gated"]) for g in data.get("gates", [])]
        return NetworkSpec(tuple(layers), tuple(gates))
    except (jsonschema.ValidationError, TypeError, KeyError) as exc:
        raise ValueError(f"invalid network spec: {exc}") from exc


def dump_spec(spec: NetworkSpec) -> str:
    return yaml.safe_dump(spec_to_dict(spec), sort_keys=False)


def load_spec(text: str) -> NetworkSpec:
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError("network spec must be a mapping")
    return spec_from_dict(data)


def read_spec(path) -> NetworkSpec:
    return load_spec(Path(path).read_text())


# -- schemas ----------------------------------------------------------------

_NUM = {"type": "number"}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_MATRIX3 = {"type": "array", "items": _VEC3}
_IRREPS = {"type": "string", "pattern": r"^[0-9x+eo ]*$"}
_MAYBE_IRREPS = {"anyOf": [_IRREPS, {"type": "null"}]}
_BLOCKS = {"type": "object", "additionalProperties": {"type": "array", "items": _NUM}}

SCHEMAS = {
    "spec": {
        "type": "object",
        "required": ["layers"],
        "properties": {
            "layers": {"type": "array", "minItems": 1, "items": {
                "type": "object",
                "required": ["irreps_in", "irreps_out"],
                "properties": {
                    "irreps_in": _IRREPS, "irreps_out": _IRREPS, "relaxed": _MAYBE_IRREPS,
                    "irreps_attr": _MAYBE_IRREPS, "irreps_fused": _MAYBE_IRREPS,
                    "filter_lmax": {"type": "integer", "minimum": 0},
                    "radial_basis": {"type": "integer", "minimum": 2},
                    "radial_hidden": {"type": "integer", "minimum": 1},
                    "r_max": {"type": "number", "exclusiveMinimum": 0},
                    "relaxed_trainable": {"type": "boolean"},
                },
            }},
            "gates": {"type": "array", "items": {
                "type": "object", "required": ["num_scalars", "gated"],
                "properties": {"num_scalars": {"type": "integer", "minimum": 0}, "gated": _IRREPS},
            }},
        },
    },
    "checkpoint": {
        "type": "object",
        "required": ["format", "version", "spec", "params"],
        "properties": {
            "format": {"const": CHECKPOINT_FORMAT},
            "version": {"const": CHECKPOINT_VERSION},
            "spec": {"type": "object"},
            "params": {"type": "object", "additionalProperties": {
                "type": "object", "required": ["shape", "values"],
                "properties": {
                    "shape": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "layout": _MAYBE_IRREPS,
                    "values": {"type": "array", "items": _NUM},
                },
            }},
            "train": {"type": ["object", "null"]},
            "history": {"type": "array", "items": _NUM},
        },
    },
    "shape_dataset": {
        "type": "object",
        "required": ["experiment", "kind", "seed", "lmax", "inputs", "targets", "input_signal", "target_signal"],
        "properties": {
            "experiment": {"type": "string"}, "kind": {"enum": ["cube", "prism", "asym"]},
            "seed": {"type": "integer"}, "lmax": {"type": "integer", "minimum": 0},
            "inputs": _MATRIX3, "targets": _MATRIX3,
            "input_signal": {"type": "array", "items": _NUM},
            "target_signal": {"type": "array", "items": _NUM},
        },
    },
    "em_dataset": {
        "type": "object",
        "required": ["experiment", "seed", "q", "dt", "E", "B", "positions", "velocities", "forces"],
        "properties": {
            "experiment": {"type": "string"}, "seed": {"type": "integer"},
            "q": _NUM, "dt": _NUM, "E": _VEC3, "B": _VEC3,
            "positions": _MATRIX3, "velocities": _MATRIX3, "forces": _MATRIX3,
        },
    },
    "sparsity": {
        "type": "object",
        "required": ["threshold", "relative", "irreps", "layers"],
        "properties": {
            "threshold": _NUM, "relative": {"type": "boolean"},
            "irreps": {"type": "array", "items": {"type": "string"}},
            "layers": {"type": "array", "items": {
                "type": "object", "required": ["cutoff", "counts"],
                "properties": {"cutoff": _NUM, "counts": {
                    "type": "object", "additionalProperties": {"type": "integer", "minimum": 0}}},
            }},
        },
    },
    "signals": {
        "type": "object",
        "required": ["monomials", "layers"],
        "properties": {
            "monomials": {"type": "array", "items": {"type": "string"}},
            "layers": {"type": "array", "items": {
                "type": "object", "required": ["scalar", "pseudoscalar", "quadratic", "verdict"],
                "properties": {
                    "scalar": _BLOCKS, "pseudoscalar": _BLOCKS,
                    "quadratic": {"type": ["object", "null"], "additionalProperties": _NUM},
                    "verdict": {"type": ["string", "null"]},
                },
            }},
        },
    },
    "fields": {
        "type": "object",
        "required": ["E_pred", "B_pred", "E_unit", "B_unit", "E_true", "B_true"],
        "properties": {k: _VEC3 for k in ("E_raw", "B_raw", "E_pred", "B_pred", "E_unit", "B_unit",
                                          "E_true", "B_true")},
    },
    "summary": {
        "type": "object",
        "required": ["experiment", "seed", "train", "final_loss", "num_params"],
        "properties": {
            "experiment": {"type": "string"}, "seed": {"type": "integer"},
            "train": {"type": "object"}, "final_loss": _NUM,
            "num_params": {"type": "integer", "minimum": 0},
        },
    },
    "audit": {
        "type": "object",
        "required": ["samples", "seed", "max_error", "mean_error", "theta_norms"],
        "properties": {
            "samples": {"type": "integer", "minimum": 1}, "seed": {"type": "integer"},
            "max_error": _NUM, "mean_error": _NUM,
            "theta_norms": {"type": "array", "items": {
                "type": "object", "additionalProperties": _NUM}},
        },
    },
}


def validate(data, schema: str) -> None:
    jsonschema.validate(data, SCHEMAS[schema])


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, data, schema: Optional[str] = None) -> Path:
    """Validate, write, and check that the file reads back equal."""
    path = Path(path)
    data = to_jsonable(data)
    if schema is not None:
        try:
            validate(data, schema)
        except jsonschema.ValidationError as exc:
            raise OutputError(f"{path.name}: {exc.message}") from exc
    try:
        text = dumps(data)
    except ValueError as exc:  # NaN / inf
        raise OutputError(f"{path.name}: {exc}") from exc
    path.write_text(text)
    back = json.loads(path.read_text())
    if back != json.loads(text):
        raise OutputError(f"{path.name} did not round-trip")
    return path


def read_json(path, schema: Optional[str] = None):
    data = json.loads(Path(path).read_text())
    if schema is not None:
        validate(data, schema)
    return data


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.write_text(text)
    if path.read_text() != text:
        raise OutputError(f"{path.name} did not round-trip")
    return path


# -- checkpoints ------------------------------------------------------------


def _param_layout(spec: NetworkSpec, key: str) -> Optional[str]:
    if key.endswith(".theta"):
        return str(spec.layers[int(key.split(".")[1])].relaxed)
    return None


def checkpoint_dict(spec: NetworkSpec, params: Params, train: Optional[dict] = None,
                    history=()) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": spec_to_dict(spec),
        "params": {
            key: {"shape": list(np.shape(params[key])), "layout": _param_layout(spec, key),
                  "values": np.ravel(params[key]).tolist()}
            for key in spec.param_shapes()
        },
        "train": train,
        "history": [float(h) for h in history],
    }


def save_checkpoint(path, spec: NetworkSpec, params: Params, train: Optional[dict] = None,
                    history=()) -> Path:
    return write_json(path, checkpoint_dict(spec, params, train, history), "checkpoint")


def load_checkpoint(path) -> tuple[NetworkSpec, Params, dict]:
    """``(spec, params, data)``; raises :class:`CheckpointError` for anything unreadable."""
    try:
        data = json.loads(Path(path).read_text())
        validate(data, "checkpoint")
        spec = spec_from_dict(data["spec"])
    except (OSError, json.JSONDecodeError, jsonschema.ValidationError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    params = {}
    for key, shape in spec.param_shapes().items():
        if key not in data["params"]:
            raise CheckpointError(f"checkpoint {path} lacks parameter {key}")
        entry = data["params"][key]
        if tuple(entry["shape"]) != tuple(shape):
            raise CheckpointError(f"{key}: stored shape {entry['shape']} != expected {list(shape)}")
        params[key] = np.array(entry["values"], dtype=float).reshape(shape)
    return spec, params, data
