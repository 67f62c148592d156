"""Strict sectioned key-value configuration.

Files look like::

    [problem]
    d = 2
    mu = 1.0, 1.0

    [run]
    seed = 20240601

Every key lives in exactly one section.  Unknown sections or keys, keys in
the wrong section and duplicates are errors.  Keys without a default must be
supplied when a subcommand needs them.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

__all__ = ["ConfigError", "Config", "SCHEMA", "REQUIRED", "CHECK_KEYS", "load_config", "parse_config", "default_config_text"]


class ConfigError(ValueError):
    """Raised for any malformed, unknown or missing configuration entry."""


def _int(text):
    v = int(text)
    if v < 0:
        raise ValueError("must be nonnegative")
    return v


def _float(text):
    v = float(text)
    if math.isnan(v):
        raise ValueError("must not be NaN")
    return v


def _vector(text):
    parts = [p for p in text.replace(",", " ").split() if p]
    if not parts:
        raise ValueError("empty vector")
    return [float(p) for p in parts]


# key -> (section, parser, default); a default of None means "no default"
SCHEMA = {
    "d": ("problem", _int, None),
    "M": ("problem", _int, None),
    "mu": ("problem", _vector, None),
    "T": ("schedule", _float, None),
    "epsilon": ("schedule", _float, 0.0),
    "lambda": ("optimizer", _float, None),
    "beta": ("optimizer", _float, None),
    "n_iters": ("optimizer", _int, None),
    "gamma": ("sampler", _float, None),
    "n_paths": ("sampler", _int, None),
    "n_replicas": ("run", _int, 1),
    "mc_samples": ("run", _int, 100_000),
    "seed": ("run", _int, None),
    "zeta": ("constants", _float, 0.5),
    "alpha": ("constants", _float, 1.0),
    "k1": ("constants", _float, 1.0),
    "k2": ("constants", _float, 1.0),
    "k3": ("constants", _float, 1.0),
    "k4": ("constants", _float, 1e-12),
    "e_theta4": ("constants", _float, None),
}

SECTIONS = sorted({sec for sec, _, _ in SCHEMA.values()})

_BASE = ("d", "mu", "seed")
_OPT = ("T", "lambda", "beta", "n_iters")
_EM = _OPT + ("gamma", "n_paths", "n_replicas")

# keys each verification check needs beyond the problem and the seed
CHECK_KEYS = {
    "B1": (),
    "A-identity": ("T",),
    "B2": _OPT + ("n_replicas",),
    "B3": _OPT + ("n_replicas",),
    "B4": _EM,
    "B5": _EM,
    "B6": _EM,
    "B7": _EM,
    "C1": _EM + ("e_theta4",),
    "C2": _EM + ("e_theta4",),
    "C3cor": ("T",),
    "C4": ("T",),
    "T1": _EM,
    "T2": _EM + ("e_theta4",),
}
REQUIRED = {
    "optimize": _BASE + _OPT,
    "sample": _BASE + ("T", "gamma", "n_paths"),
    "bound t1": _BASE + _OPT + ("gamma",),
    "bound t2": _BASE + _OPT + ("gamma", "e_theta4"),
    "budget t1": _BASE,
    "budget t2": _BASE + _OPT + ("e_theta4",),
    "e2e": _BASE + ("n_paths", "n_replicas"),
}


@dataclass(frozen=True)
class Config:
    """Validated values; ``get`` falls back to schema defaults."""

    values: dict
    source: str = "<string>"

    def __getitem__(self, key):
        v = self.get(key)
        if v is None:
            raise ConfigError(f"missing required key: {key}")
        return v

    def get(self, key):
        if key not in SCHEMA:
            raise KeyError(key)
        if key in self.values:
            return self.values[key]
        if key == "M" and "d" in self.values:
            return self.values["d"]
        return SCHEMA[key][2]

    def require(self, command: str, keys=None) -> None:
        """Raise listing every key that ``command`` (or the explicit ``keys``) needs but lacks."""
        keys = REQUIRED[command] if keys is None else keys
        missing = [k for k in dict.fromkeys(keys) if self.get(k) is None]
        if missing:
            raise ConfigError(f"missing required keys for {command}: {', '.join(missing)}")

    @property
    def mu(self) -> np.ndarray:
        return np.asarray(self["mu"], dtype=float)

    def resolved(self) -> dict:
        """Every schema key with its effective value (None when unset)."""
        return {k: self.get(k) for k in sorted(SCHEMA)}


def _validate(values: dict) -> None:
    d = values.get("d")
    if d is not None and d < 1:
        raise ConfigError("d must be positive")
    if "mu" in values and d is not None:
        mu = values["mu"]
        if len(mu) == 1 and d > 1:
            values["mu"] = mu * d
        elif len(mu) != d:
            raise ConfigError(f"mu has {len(mu)} entries but d = {d}")
    if "M" in values and d is not None and values["M"] != d:
        raise ConfigError("M must equal d for the affine score family")
    checks = [
        ("T", lambda v: v > 0, "T must be positive"),
        ("epsilon", lambda v: 0 <= v < 1, "epsilon must lie in [0, 1)"),
        ("lambda", lambda v: v > 0, "lambda must be positive"),
        ("beta", lambda v: v > 0, "beta must be positive"),
        ("gamma", lambda v: 0 < v < 1, "gamma must lie in (0, 1)"),
        ("n_paths", lambda v: v >= 2, "n_paths must be at least 2"),
        ("n_replicas", lambda v: v >= 1, "n_replicas must be positive"),
        ("mc_samples", lambda v: v >= 2, "mc_samples must be at least 2"),
        ("zeta", lambda v: 0 < v < 1, "zeta must lie in (0, 1)"),
        ("alpha", lambda v: 0.5 <= v <= 1, "alpha must lie in [1/2, 1]"),
        ("k1", lambda v: v >= 1, "k1 below the affine family's constant 1"),
        ("k2", lambda v: v >= 1, "k2 below the affine family's constant 1"),
        ("k3", lambda v: v >= 1, "k3 below the affine family's constant 1"),
        ("k4", lambda v: v > 0, "k4 must be positive"),
        ("e_theta4", lambda v: v >= 0, "e_theta4 must be nonnegative"),
    ]
    for key, ok, msg in checks:
        if key in values and not ok(values[key]):
            raise ConfigError(f"{msg} (got {values[key]})")
    T, eps = values.get("T"), values.get("epsilon")
    if T is not None and eps is not None and eps >= T:
        raise ConfigError("epsilon must be below T")
    if "seed" in values and values["seed"] >= 2**64:
        raise ConfigError("seed must fit in 64 bits")


def parse_config(text: str, source: str = "<string>") -> Config:
    cp = configparser.ConfigParser(interpolation=None, strict=True, default_section="\0none")
    cp.optionxform = str  # keys are case-sensitive (T, M)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}] (expected one of {', '.join(SECTIONS)})")
        for key, raw in cp.items(section):
            if key not in SCHEMA:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            home, parse, _ = SCHEMA[key]
            if home != section:
                raise ConfigError(f"{source}: key {key!r} belongs in [{home}], not [{section}]")
            try:
                values[key] = parse(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {key!r}: {raw!r} ({exc})") from exc
    _validate(values)
    return Config(values, source)


def load_config(path) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def default_config_text() -> str:
    return resources.files("scorelab").joinpath("default.cfg").read_text(encoding="utf-8")
