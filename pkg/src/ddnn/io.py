"""Readers and writers for trajectory CSVs and the JSON config/model/report files.

CSV numbers use 17 significant digits so 64-bit floats survive a text round
trip. JSON is written with sorted keys and a fixed indent; non-finite floats
become the strings ``"inf"``, ``"-inf"`` and ``"nan"`` so the files stay
strict JSON.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from ddnn.field import DelayFieldSpec
from ddnn.solver import SolverConfig
from ddnn.trainer import RunConfig


class ConfigError(ValueError):
    """Invalid run configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# -- CSV ----------------------------------------------------------------------


def fmt(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def write_csv(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(fmt(x) for x in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """``(header, rows)``; raises ValueError on an empty body or ragged rows."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(lines) == 1:
        raise ValueError(f"{path}: no data rows")
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != len(header):
            raise ValueError(f"{path}:{i}: expected {len(header)} columns, got {len(cells)}")
        rows.append([float(c) for c in cells])
    return header, np.array(rows, dtype=float)


def trajectory_header(d: int) -> list[str]:
    return ["t"] + [f"z{i}" for i in range(d)]


def write_trajectory_csv(path, times, states) -> None:
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    rows = np.column_stack([np.asarray(times, dtype=float), states])
    write_csv(path, trajectory_header(states.shape[1]), rows)


def read_trajectory_csv(path) -> tuple[np.ndarray, np.ndarray]:
    header, rows = read_csv(path)
    if header != trajectory_header(len(header) - 1) or len(header) < 2:
        raise ValueError(f"{path}: header must be t,z0,...")
    return rows[:, 0], rows[:, 1:]


# -- JSON ---------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else fmt(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if hasattr(obj, "value"):  # enums
        return obj.value
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8", newline="")


# -- run configuration --------------------------------------------------------

_POS = {"type": "number", "exclusiveMinimum": 0}

SOLVER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "rtol": _POS,
        "atol": _POS,
        "h_init": _POS,
        "h_min": _POS,
        "h_max": {"anyOf": [_POS, {"type": "null"}]},
        "safety": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "max_steps": {"type": "integer", "minimum": 1},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "dataset": {"enum": ["toy", "two_circles"]},
        "combine": {"enum": ["concat", "convex"]},
        "hidden_dim": {"type": "integer", "minimum": 1},
        "state_dim": {"type": "integer", "minimum": 1},
        "lam": {"type": "number", "minimum": 0, "maximum": 1},
        "taus": {"type": "array", "minItems": 1, "items": _POS},
        "include_time": {"type": "boolean"},
        "epochs": {"type": "integer", "minimum": 1},
        "lr": _POS,
        "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "eps": _POS,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "mode": {"enum": ["fixed", "adaptive"]},
        "fixed_h": _POS,
        "solver": SOLVER_SCHEMA,
        "loss": {"enum": ["trajectory_mse", "cross_entropy"]},
        "n_samples": {"type": "integer", "minimum": 10},
        "n_points": {"type": "integer", "minimum": 2, "multipleOf": 2},
        "t_end": _POS,
    },
}


def _path(err: jsonschema.ValidationError) -> str:
    parts = ["config"]
    for p in err.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else f".{p}")
    return "".join(parts)


def config_from_dict(doc) -> RunConfig:
    """Validate a parsed JSON document and build the RunConfig it describes."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise ConfigError(_path(err), err.message)
    doc = dict(doc)
    solver = dict(doc.pop("solver", {}))
    if solver.get("h_max", 0) is None:
        solver.pop("h_max")
    try:
        cfg = SolverConfig(**solver)
    except ValueError as exc:
        raise ConfigError("config.solver", str(exc)) from None
    try:
        run = RunConfig(solver=cfg, **doc)
        run.field_spec()
    except ValueError as exc:
        raise ConfigError("config", str(exc)) from None
    if run.mode == "fixed" and run.fixed_h > min(run.taus):
        raise ConfigError("config.fixed_h", "fixed step must not exceed the smallest delay")
    return run


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    return config_from_dict(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    out = cfg.to_dict()
    if math.isinf(out["solver"]["h_max"]):
        out["solver"]["h_max"] = None
    return out


# -- model files --------------------------------------------------------------


def model_to_dict(spec: DelayFieldSpec, theta, extra: dict | None = None) -> dict:
    out = {
        "spec": {
            "state_dim": spec.state_dim,
            "hidden_dim": spec.hidden_dim,
            "combine": spec.combine.value,
            "lam": spec.lam,
            "tau": spec.tau,
            "include_time": spec.include_time,
            "activation": spec.activation,
        },
        "theta": [float(x) for x in np.asarray(theta)],
    }
    if extra:
        out.update(extra)
    return out


def model_from_dict(doc: dict) -> tuple[DelayFieldSpec, np.ndarray]:
    spec = DelayFieldSpec(**doc["spec"])
    theta = np.array([float(x) for x in doc["theta"]], dtype=float)
    return spec, theta
