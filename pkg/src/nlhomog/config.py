"""TOML configuration loading and canonical config digests.

A config file describes a model (energy family plus coefficient
realization), optionally a grid, solver tolerances, and an experiment
sweep.  ``canonical_digest`` hashes any JSON-serializable payload in a
key-sorted canonical encoding, which is how reports tie themselves to
the exact inputs that produced them.
"""

from __future__ import annotations

import hashlib
import json
import sys

import numpy as np

from . import fields as F
from .lagrangian import (
    COEFFICIENT_KINDS,
    COSPROD,
    G_KINDS,
    LagrangianModel,
    ModelError,
    MOLLIFIED_CHECKERBOARD,
    sample_coefficient_field,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter version
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "canonical_digest",
    "load_config",
    "model_from_config",
    "grid_from_config",
    "solver_from_config",
]


class ConfigError(ValueError):
    """Invalid or missing configuration data (CLI exit code 2)."""


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def canonical_digest(payload) -> str:
    """Stable sha256 hex digest of a JSON-serializable payload."""
    text = json.dumps(
        payload, sort_keys=True, separators=(",", ":"), default=_jsonable
    )
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_config(path) -> dict:
    """Parse a TOML config file into a plain dict."""
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"config file {path} is not valid TOML: {err}") from err


def _section(cfg, name):
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section [{name}] must be a table")
    return sec


def _get(sec, key, kind, default, section):
    value = sec.get(key, default)
    if value is None:
        raise ConfigError(f"config key {section}.{key} is required")
    try:
        return kind(value)
    except (TypeError, ValueError) as err:
        raise ConfigError(
            f"config key {section}.{key}={value!r} is not a valid {kind.__name__}"
        ) from err


def model_from_config(cfg: dict, seed_override=None) -> LagrangianModel:
    """Build the Lagrangian model described by [model] and [coefficient].

    ``seed_override`` (or a top-level ``seed`` key) replaces the
    coefficient seed, so sweeps can revisit one config with fresh draws.
    """
    msec = _section(cfg, "model")
    csec = _section(cfg, "coefficient")
    dim = _get(msec, "dim", int, 2, "model")
    kind = _get(csec, "kind", str, MOLLIFIED_CHECKERBOARD, "coefficient")
    if kind not in COEFFICIENT_KINDS:
        raise ConfigError(
            f"coefficient.kind must be one of {COEFFICIENT_KINDS}, got {kind!r}"
        )
    g_kind = _get(msec, "g_kind", str, COSPROD, "model")
    if g_kind not in G_KINDS:
        raise ConfigError(f"model.g_kind must be one of {G_KINDS}, got {g_kind!r}")
    seed = _get(csec, "seed", int, 0, "coefficient")
    if "seed" in cfg:
        seed = _get(cfg, "seed", int, None, "<top level>")
    if seed_override is not None:
        seed = int(seed_override)
    try:
        coeff = sample_coefficient_field(
            kind,
            dim,
            _get(csec, "extent", int, 3, "coefficient"),
            seed,
            mollifier_width=_get(csec, "mollifier_width", float, 0.0, "coefficient"),
            constant_value=_get(csec, "constant_value", float, 1.0, "coefficient"),
        )
        return LagrangianModel(
            dim=dim,
            coeff=coeff,
            g_kind=g_kind,
            c_max=_get(msec, "c_max", float, 0.5, "model"),
            N=_get(msec, "N", int, 3, "model"),
            Lambda=_get(msec, "Lambda", float, 4.0, "model"),
            eps=_get(msec, "eps", float, 1.0, "model"),
        )
    except ModelError as err:
        raise ConfigError(f"invalid model configuration: {err}") from err


def grid_from_config(cfg: dict, boundary_default=F.DIRICHLET) -> F.Grid:
    gsec = _section(cfg, "grid")
    boundary = _get(gsec, "boundary", str, boundary_default, "grid")
    if boundary not in (F.DIRICHLET, F.PERIODIC):
        raise ConfigError(
            f"grid.boundary must be '{F.DIRICHLET}' or '{F.PERIODIC}', got {boundary!r}"
        )
    msec = _section(cfg, "model")
    try:
        return F.Grid(
            dim=_get(msec, "dim", int, 2, "model"),
            n=_get(gsec, "n", int, 32, "grid"),
            side_length=_get(gsec, "side", float, 1.0, "grid"),
            boundary=boundary,
        )
    except (ValueError, F.FieldShapeError) as err:
        raise ConfigError(f"invalid grid configuration: {err}") from err


def solver_from_config(cfg: dict) -> dict:
    ssec = _section(cfg, "solver")
    return {
        "tol": _get(ssec, "tol", float, 1e-9, "solver"),
        "cg_rtol": _get(ssec, "cg_rtol", float, 1e-10, "solver"),
        "max_iterations": _get(ssec, "max_iterations", int, 40, "solver"),
    }
