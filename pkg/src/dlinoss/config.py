"""Run configuration files.

A run config is a YAML (or JSON) mapping with the blocks below; unknown keys
are rejected at every level. ``input_dim``/``output_dim`` are implied by the
task and never appear in the file.

    task:
      kind: decay | adding | csv
      # decay:  a, b, c, d, seq_len, n_train, n_val, n_test
      # adding: seq_len, n_train, n_val, n_test
      # csv:    path, schema (per-step | sequence), ratios, loss, metric, output_dim
    model:   hidden_dim, state_dim, num_blocks, variant, readout,
             include_time, mixing, skip, scan_mode
    init:    scheme, r_min, r_max, theta_min, theta_max, A_range, G_max
    train:   max_steps, eval_every, batch_size, lr, patience, threshold,
             stop_at_threshold
    output:  results directory
    seeds:   list of integer seeds

Every block except ``task`` may be omitted and falls back to the defaults of
the corresponding dataclass. All randomness flows from the seeds: seed s
generates the task data, the initial weights and the batch order of run s.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import yaml

from .core import Variant
from .errors import ConfigError
from .model import MIXINGS, READOUTS
from .param_init import SCHEMES

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_nonneg_int = {"type": "integer", "minimum": 0}
_VARIANTS = [v.value for v in Variant]

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["task"],
    "properties": {
        "task": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["decay", "adding", "csv"]}},
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden_dim": _pos_int, "state_dim": _pos_int, "num_blocks": _nonneg_int,
                "variant": {"enum": _VARIANTS},
                "readout": {"enum": list(READOUTS)},
                "include_time": {"type": "boolean"},
                "mixing": {"enum": list(MIXINGS)},
                "skip": {"type": "boolean"},
                "scan_mode": {"enum": ["parallel", "sequential"]},
            },
        },
        "init": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scheme": {"enum": list(SCHEMES)},
                "r_min": _num, "r_max": _num, "theta_min": _num, "theta_max": _num,
                "A_range": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                "G_max": _num,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_steps": _nonneg_int, "eval_every": _pos_int, "batch_size": _pos_int,
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "patience": {"type": ["integer", "null"], "minimum": 1},
                "threshold": {"type": ["number", "null"]},
                "stop_at_threshold": {"type": "boolean"},
            },
        },
        "output": {"type": "string"},
        "seeds": {"type": "array", "items": _nonneg_int, "minItems": 1},
    },
}

TASK_SCHEMAS = {
    "decay": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "kind": {"const": "decay"},
            "a": _num, "b": _num, "c": _num, "d": _num,
            "seq_len": _pos_int, "n_train": _pos_int, "n_val": _pos_int, "n_test": _nonneg_int,
        },
    },
    "adding": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "kind": {"const": "adding"},
            "seq_len": {"type": "integer", "minimum": 2},
            "n_train": _pos_int, "n_val": _pos_int, "n_test": _nonneg_int,
        },
    },
    "csv": {
        "type": "object",
        "additionalProperties": False,
        "required": ["path"],
        "properties": {
            "kind": {"const": "csv"},
            "path": {"type": "string"},
            "schema": {"enum": ["per-step", "sequence"]},
            "ratios": {"type": "array", "items": {"type": "number", "minimum": 0},
                       "minItems": 3, "maxItems": 3},
            "loss": {"enum": ["mse", "cross-entropy"]},
            "metric": {"enum": ["mse", "rmse", "accuracy"]},
            "output_dim": _pos_int,
        },
    },
}


@dataclass
class RunConfig:
    """Validated run configuration; the blocks are kept as plain dicts."""

    task: dict
    model: dict = field(default_factory=dict)
    init: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    output: str = "results"
    seeds: list = field(default_factory=lambda: [0])

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        validate(raw)
        raw = copy.deepcopy(raw)
        return cls(**raw)

    def to_dict(self) -> dict:
        return {
            "task": dict(self.task), "model": dict(self.model), "init": dict(self.init),
            "train": dict(self.train), "output": self.output, "seeds": list(self.seeds),
        }

    def with_overrides(self, seed=None, out=None, variant=None) -> "RunConfig":
        d = self.to_dict()
        if seed is not None:
            d["seeds"] = [int(seed)]
        if out is not None:
            d["output"] = str(out)
        if variant is not None:
            d["model"]["variant"] = Variant.parse(variant).value
        return RunConfig.from_dict(d)


def _check(instance, schema, prefix: str) -> None:
    try:
        jsonschema.validate(instance, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join([prefix] * bool(prefix) + [str(p) for p in exc.absolute_path]) or "<root>"
        raise ConfigError(f"invalid run config at {where}: {exc.message}") from None


def validate(raw) -> None:
    """Raise ConfigError unless ``raw`` is a well-formed run config."""
    _check(raw, SCHEMA, "")
    _check(raw["task"], TASK_SCHEMAS[raw["task"]["kind"]], "task")


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return RunConfig.from_dict(raw)
