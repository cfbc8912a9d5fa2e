"""Run configuration: flat dotted keys with defaults, TOML or JSON files."""

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

DEFAULTS = {
    "geometry.dim": 2,
    "geometry.L1": 1.0,
    "geometry.n_modes": 16,
    "geometry.n_vertical": 24,
    "physics.nu": 0.1,
    "physics.alpha": 1.0,
    "physics.delta": 0.5,
    "physics.beta1": 0.1,
    "physics.beta2": 0.1,
    "stationary.forcing": "zero",
    "stationary.forcing_amplitude": 0.0,
    "stationary.plate_load": "zero",
    "stationary.plate_load_amplitude": 0.0,
    "stationary.tol": 1e-10,
    "spectrum.count": 20,
    "spectrum.mode": "full",
    "control.gamma": 2.0,
    "control.t0": 0.1,
    "control.margin": -1.0,
    "control.n_act": 2,
    "control.actuators": "auto",
    "control.tol_rel": 1e-6,
    "simulation.T": 8.0,
    "simulation.dt": 0.025,
    "simulation.R": 1e-2,
    "simulation.picard_tol": 1e-9,
    "simulation.max_picard": 25,
    "simulation.form": "recursion",
    "simulation.feedback": True,
    "simulation.nonlinear": False,
    "verify.level": "full",
    "output.dir": "out",
    "seed": 0,
}

CHOICES = {
    "stationary.forcing": ("zero", "uniform", "cosine"),
    "stationary.plate_load": ("zero", "cosine"),
    "spectrum.mode": ("full", "plate_only"),
    "control.actuators": ("auto", "normal", "normal+tangential", "none"),
    "simulation.form": ("recursion", "kernel"),
    "verify.level": ("full", "quick"),
}

POSITIVE = ("geometry.L1", "physics.nu", "physics.alpha", "control.gamma", "simulation.T",
            "simulation.dt", "simulation.picard_tol", "stationary.tol", "control.tol_rel")
NON_NEGATIVE = ("physics.delta", "physics.beta1", "physics.beta2", "control.t0", "simulation.R")


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, value):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"config key {key!r} expects a boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or not float(value).is_integer():
            raise ConfigError(f"config key {key!r} expects an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"config key {key!r} expects a number, got {value!r}") from None
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``values`` maps dotted keys to values."""

    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name):
        pre = name + "."
        return {k[len(pre):]: v for k, v in self.values.items() if k.startswith(pre)}

    @property
    def margin(self):
        m = self.values["control.margin"]
        return 0.2 * self.values["control.gamma"] if m < 0 else m

    def canonical(self):
        return json.dumps(self.values, sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_overrides(self, overrides):
        vals = dict(self.values)
        vals.update(parse_overrides(overrides))
        return build_config(vals)


def build_config(raw):
    """Validate a flat or nested mapping against the defaults.

    Raises
    ------
    ConfigError
        On unknown keys (named in the message) or invalid values.
    """
    flat = _flatten(raw)
    unknown = sorted(k for k in flat if k not in DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    vals = dict(DEFAULTS)
    for k, v in flat.items():
        vals[k] = _coerce(k, v)
    for k, allowed in CHOICES.items():
        if vals[k] not in allowed:
            raise ConfigError(f"config key {k!r} must be one of {allowed}, got {vals[k]!r}")
    for k in POSITIVE:
        if not vals[k] > 0:
            raise ConfigError(f"config key {k!r} must be positive")
    for k in NON_NEGATIVE:
        if vals[k] < 0:
            raise ConfigError(f"config key {k!r} must be non-negative")
    if vals["geometry.dim"] != 2:
        raise ConfigError("config key 'geometry.dim': only dim = 2 is supported")
    if vals["geometry.n_modes"] < 4 or vals["geometry.n_modes"] % 2:
        raise ConfigError("config key 'geometry.n_modes' must be an even integer >= 4")
    if vals["geometry.n_vertical"] < 4:
        raise ConfigError("config key 'geometry.n_vertical' must be at least 4")
    if vals["control.n_act"] < 1 or vals["control.n_act"] > vals["geometry.n_modes"] // 2:
        raise ConfigError("config key 'control.n_act' must lie in [1, n_modes / 2]")
    if vals["simulation.max_picard"] < 1:
        raise ConfigError("config key 'simulation.max_picard' must be positive")
    return RunConfig(vals)


def parse_overrides(items):
    """``["a.b=1", ...]`` to a dict, values parsed as TOML scalars when possible."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key: {key}")
        try:
            value = tomllib.loads(f"v = {text.strip()}")["v"]
        except tomllib.TOMLDecodeError:
            value = text.strip()
        out[key] = value
    return out


def load_config(path=None, overrides=None, seed=None):
    """Read a TOML (or ``.json``) file, apply overrides and the seed."""
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        text = p.read_text()
        try:
            raw = json.loads(text) if p.suffix == ".json" else tomllib.loads(text)
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot parse config file {p}: {exc}") from exc
    flat = _flatten(raw)
    flat.update(parse_overrides(overrides))
    if seed is not None:
        flat["seed"] = seed
    return build_config(flat)
