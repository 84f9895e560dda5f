"""Experiment configuration: defaults, JSON config file, command-line overrides."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass
import json
import logging
from pathlib import Path
from typing import Any

import voluptuous as vol

from .core import (
    DEFAULT_ALPHA,
    DEFAULT_BOOT_REPS,
    DEFAULT_LEVEL,
    DEFAULT_MAX_FACTOR_LEVELS,
    DEFAULT_NODESIZE,
    DEFAULT_NTREE,
    ConfigError,
)
from .core.vimp import METHODS

_LOGGER = logging.getLogger(__name__)

DEFAULT_NSPLITS = (5, 10, 20, 50, 1024)
DEFAULT_GRANULARITIES = (2, 5, 10, 20, 30)
DEFAULT_NOISE = 25
DEFAULT_N_GRID = (200, 2000, 20000)


def _positive_int(minimum: int = 1):
    return vol.All(vol.Coerce(int), vol.Range(min=minimum))


def _int_list(minimum: int):
    return vol.All([_positive_int(minimum)], vol.Length(min=1), vol.Coerce(tuple))


def _positive_float():
    return vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))


def _unit_interval():
    return vol.All(vol.Coerce(float), vol.Range(min=0, max=1, min_included=False, max_included=False))


def _column_name():
    return vol.All(str, vol.Strip, vol.Length(min=1))


CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional("data", default=None): vol.Any(None, str),
        vol.Optional("time_col", default="time"): _column_name(),
        vol.Optional("status_col", default="status"): _column_name(),
        vol.Optional("max_factor_levels", default=DEFAULT_MAX_FACTOR_LEVELS): _positive_int(1),
        vol.Optional("granularity", default=list(DEFAULT_GRANULARITIES)): _int_list(2),
        vol.Optional("nsplit", default=list(DEFAULT_NSPLITS)): _int_list(0),
        vol.Optional("ntree", default=DEFAULT_NTREE): _positive_int(1),
        vol.Optional("mtry", default=None): vol.Any(None, _positive_int(1)),
        vol.Optional("nodesize", default=DEFAULT_NODESIZE): _positive_int(1),
        vol.Optional("seed", default=0): _positive_int(0),
        vol.Optional("boot_reps", default=DEFAULT_BOOT_REPS): _positive_int(1),
        vol.Optional("level", default=DEFAULT_LEVEL): _unit_interval(),
        vol.Optional("alpha", default=DEFAULT_ALPHA): _unit_interval(),
        vol.Optional("method", default="random"): vol.In(METHODS),
        vol.Optional("noise_continuous", default=DEFAULT_NOISE): _positive_int(0),
        vol.Optional("noise_discrete", default=DEFAULT_NOISE): _positive_int(0),
        vol.Optional("n_jobs", default=1): vol.All(vol.Coerce(int), vol.NotIn([0])),
        vol.Optional("out_dir", default="out"): _column_name(),
        vol.Optional("model", default=None): vol.Any(None, str),
        vol.Optional("n_grid", default=list(DEFAULT_N_GRID)): _int_list(1),
        vol.Optional("n_seeds", default=10): _positive_int(1),
        vol.Optional("t_max", default=1.0): _positive_float(),
        vol.Optional("s_max", default=2.0): _positive_float(),
        vol.Optional("epsilon", default=0.01): _positive_float(),
    },
    extra=vol.PREVENT_EXTRA,
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated settings shared by every subcommand.

    Single-forest commands (fit, vimp, convergence) use the last entry of the
    ``granularity`` and ``nsplit`` lists; the figure sweeps use them all.
    """

    data: str | None
    time_col: str
    status_col: str
    max_factor_levels: int
    granularity: tuple[int, ...]
    nsplit: tuple[int, ...]
    ntree: int
    mtry: int | None
    nodesize: int
    seed: int
    boot_reps: int
    level: float
    alpha: float
    method: str
    noise_continuous: int
    noise_discrete: int
    n_jobs: int
    out_dir: str
    model: str | None
    n_grid: tuple[int, ...]
    n_seeds: int
    t_max: float
    s_max: float
    epsilon: float

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> ExperimentConfig:
        try:
            return cls(**CONFIG_SCHEMA(dict(raw)))
        except vol.Invalid as err:
            path = ".".join(str(p) for p in err.path) or "<config>"
            raise ConfigError(f"invalid configuration at {path}: {err.msg}") from err

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        for key in ("granularity", "nsplit", "n_grid"):
            out[key] = list(out[key])
        return out


def read_config_file(path: str | Path) -> dict[str, Any]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return raw


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Merge defaults < config file < overrides (``None`` overrides are ignored)."""
    merged: dict[str, Any] = read_config_file(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    config = ExperimentConfig.from_mapping(merged)
    _LOGGER.debug("Configuration: %s", config)
    return config
