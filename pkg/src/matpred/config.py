"""Strict INI-style experiment configuration.

Sections and keys are whitelisted per subcommand; any unknown section or key
is an error naming the offender, so typos in penalty names cannot silently
change an experiment.  Values are validated (type, range, referenced files
exist) at parse time.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

# key -> (type tag, constraint) where constraint is "positive", "nonnegative",
# "unit" (0..1], "file" or None.
_KEY_TYPES = {
    "design.kind": ("choice:completion,multitask,file", None),
    "design.m": ("int", "positive"),
    "design.t": ("int", "positive"),
    "design.path": ("str", "file"),
    "truth.kind": ("choice:low_rank,file", None),
    "truth.rank": ("int", "positive"),
    "truth.nuclear_norm": ("float", "positive"),
    "truth.seed": ("int", None),
    "truth.path": ("str", "file"),
    "noise.kind": ("choice:gaussian,uniform", None),
    "noise.sigma": ("float", "positive"),
    "noise.half_width": ("float", "positive"),
    "data.dataset": ("str", "file"),
    "data.meta": ("str", "file"),
    "data.design": ("str", "file"),
    "run.seed": ("int", None),
    "run.jobs": ("int", "positive"),
    "run.n": ("int", "positive"),
    "run.trials": ("int", "positive"),
    "run.x": ("float", "positive"),
    "run.c_abs": ("float", "positive"),
    "run.family": ("choice:nuclear,elastic_net,nuclear_l1,full_mixture", None),
    "run.r_nuclear": ("float", "positive"),
    "run.r_frob2": ("float", "positive"),
    "run.r_l1": ("float", "positive"),
    "run.lambda_nuclear": ("float", "nonnegative"),
    "run.lambda_frob2": ("float", "nonnegative"),
    "run.lambda_l1": ("float", "nonnegative"),
    "run.folds": ("int", "positive"),
    "run.n_grid": ("int_list", None),
    "run.shapes": ("shape_list", None),
    "run.samples": ("int", "positive"),
    "run.radius": ("float", "positive"),
    "run.ball_nuclear": ("float", "nonnegative"),
    "run.ball_frob2": ("float", "nonnegative"),
    "run.ball_l1": ("float", "nonnegative"),
    "run.calibrate": ("bool", None),
    "run.target_fraction": ("float", "unit"),
    "run.trial_offset": ("int", "nonnegative"),
    "grid.penalties": ("penalty_list", None),
    "output.dir": ("str", None),
    "output.formats": ("str_list", None),
}

_COMMAND_KEYS = {
    "fit": {
        "design.*", "truth.*", "noise.*", "data.*",
        "run.seed", "run.jobs", "run.n",
        "run.lambda_nuclear", "run.lambda_frob2", "run.lambda_l1",
        "output.*",
    },
    "tune": {
        "design.*", "truth.*", "noise.*", "data.*",
        "run.seed", "run.jobs", "run.n", "run.folds",
        "grid.penalties", "output.*",
    },
    "verify-oracle": {
        "design.*", "truth.*", "noise.*",
        "run.seed", "run.jobs", "run.n", "run.trials", "run.x", "run.c_abs",
        "run.family", "run.r_nuclear", "run.r_frob2", "run.r_l1",
        "run.calibrate", "run.target_fraction", "run.trial_offset",
        "output.*",
    },
    "verify-bernstein": {
        "design.*", "truth.*", "noise.*",
        "run.seed", "run.samples", "run.radius",
        "run.ball_nuclear", "run.ball_frob2", "run.ball_l1",
        "output.*",
    },
    "rate": {
        "design.*", "truth.*", "noise.*",
        "run.seed", "run.jobs", "run.trials", "run.x", "run.c_abs",
        "run.family", "run.r_nuclear", "run.r_frob2", "run.r_l1",
        "run.n_grid", "output.*",
    },
    "dimension-free": {
        "truth.*", "noise.*",
        "run.seed", "run.jobs", "run.n", "run.trials", "run.x", "run.c_abs",
        "run.family", "run.r_nuclear", "run.r_frob2", "run.r_l1",
        "run.shapes", "output.*",
    },
}


def _parse_value(key: str, raw: str):
    type_tag, constraint = _KEY_TYPES[key]
    try:
        if type_tag == "int":
            value = int(raw)
        elif type_tag == "float":
            value = float(raw)
        elif type_tag == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError("expected a boolean")
            value = low in ("true", "1", "yes")
        elif type_tag == "int_list":
            value = [int(v) for v in raw.replace(";", ",").split(",") if v.strip()]
            if not value:
                raise ValueError("empty list")
        elif type_tag == "str_list":
            value = [v.strip() for v in raw.split(",") if v.strip()]
        elif type_tag == "shape_list":
            value = []
            for item in raw.split(","):
                item = item.strip()
                if not item:
                    continue
                m, t = item.lower().split("x")
                value.append((int(m), int(t)))
            if not value:
                raise ValueError("empty list")
        elif type_tag == "penalty_list":
            value = []
            for item in raw.split(";"):
                item = item.strip()
                if not item:
                    continue
                parts = [float(v) for v in item.split(",")]
                if len(parts) != 3:
                    raise ValueError("each grid entry needs three weights")
                if any(p < 0 for p in parts):
                    raise ValueError("penalty weights must be nonnegative")
                value.append(tuple(parts))
            if not value:
                raise ValueError("empty grid")
        elif type_tag.startswith("choice:"):
            choices = type_tag.split(":", 1)[1].split(",")
            value = raw.strip()
            if value not in choices:
                raise ValueError(f"expected one of {choices}")
        else:
            value = raw.strip()
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None
    if constraint == "positive" and not value > 0:
        raise ConfigError(key, f"must be positive, got {value}")
    if constraint == "nonnegative" and not value >= 0:
        raise ConfigError(key, f"must be >= 0, got {value}")
    if constraint == "unit" and not (0 < value <= 1):
        raise ConfigError(key, f"must be in (0, 1], got {value}")
    if constraint == "file" and not Path(value).is_file():
        raise ConfigError(key, f"referenced file '{value}' does not exist")
    return value


@dataclass
class ExperimentConfig:
    """Validated key/value view of one experiment configuration."""

    command: str
    values: dict = field(default_factory=dict)
    overrides: list = field(default_factory=list)

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def require(self, key: str):
        if key not in self.values:
            raise ConfigError(key, "required key is missing")
        return self.values[key]

    def apply_override(self, assignment: str):
        """Apply one 'section.key=value' override (after file parsing)."""
        if "=" not in assignment:
            raise ConfigError(assignment, "override must look like section.key=value")
        key, raw = assignment.split("=", 1)
        key = key.strip().lower()
        if key not in _KEY_TYPES:
            raise ConfigError(key, "unknown key")
        if not _allowed(self.command, key):
            raise ConfigError(key, f"not accepted by subcommand '{self.command}'")
        self.values[key] = _parse_value(key, raw)
        self.overrides.append(assignment)


def _allowed(command: str, key: str) -> bool:
    allowed = _COMMAND_KEYS[command]
    section = key.split(".", 1)[0]
    return key in allowed or f"{section}.*" in allowed


def load_config(path, command: str) -> ExperimentConfig:
    """Parse and validate a config file for the given subcommand."""
    if command not in _COMMAND_KEYS:
        raise ConfigError(command, "unknown subcommand")
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"config file '{path}' does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text())
    except configparser.Error as exc:
        raise ConfigError("config", f"cannot parse '{path}': {exc}") from None
    values = {}
    for section in parser.sections():
        lowered = section.lower()
        for raw_key, raw_value in parser.items(section):
            key = f"{lowered}.{raw_key.lower()}"
            if key not in _KEY_TYPES:
                raise ConfigError(key, "unknown key")
            if not _allowed(command, key):
                raise ConfigError(key, f"not accepted by subcommand '{command}'")
            values[key] = _parse_value(key, raw_value)
    cfg = ExperimentConfig(command=command, values=values)
    _check_cross_requirements(cfg)
    return cfg


def _check_cross_requirements(cfg: ExperimentConfig):
    kind = cfg.get("design.kind")
    if kind == "completion":
        for key in ("design.m", "design.t"):
            if cfg.get(key) is None:
                raise ConfigError(key, "required for completion designs")
    if kind in ("multitask", "file") and cfg.get("design.path") is None:
        raise ConfigError("design.path", f"required for design kind '{kind}'")
    if cfg.get("truth.kind") == "low_rank":
        for key in ("truth.rank", "truth.nuclear_norm"):
            if cfg.get(key) is None:
                raise ConfigError(key, "required for low_rank truth")
    if cfg.get("truth.kind") == "file" and cfg.get("truth.path") is None:
        raise ConfigError("truth.path", "required for file truth")
    noise_kind = cfg.get("noise.kind")
    if noise_kind == "gaussian" and cfg.get("noise.sigma") is None:
        raise ConfigError("noise.sigma", "required for gaussian noise")
    if noise_kind == "uniform" and cfg.get("noise.half_width") is None:
        raise ConfigError("noise.half_width", "required for uniform noise")
