"""INI run configuration shared by the command-line tools."""
from __future__ import annotations

import configparser
import io
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .model import Activation, ModelConfig, get_activation, hermite_coefficients

__all__ = ["RunConfig", "ConfigError", "SWEEP_PARAMETERS", "parse_times", "load_config"]

SWEEP_PARAMETERS = ("psi", "phi", "lambda", "t")
_LOGSPACE = re.compile(r"^\s*logspace\(\s*([^,]+),\s*([^,]+),\s*([^)]+)\)\s*$")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def parse_times(text: str) -> np.ndarray:
    """``logspace(a, b, k)`` or a comma-separated list of nonnegative times."""
    m = _LOGSPACE.match(text)
    try:
        if m:
            a, b, k = float(m.group(1)), float(m.group(2)), int(m.group(3))
            if not 0 < a <= b or k < 1:
                raise ConfigError(f"bad time grid {text!r}")
            return np.geomspace(a, b, k)
        vals = np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError as exc:
        raise ConfigError(f"cannot parse times {text!r}") from exc
    if vals.size == 0 or np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ConfigError(f"times must be a nonempty list of nonnegative numbers, got {text!r}")
    return vals


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, complex):
        return repr(v).strip("()")
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class RunConfig:
    # model
    mu: float | None = None
    nu: float | None = None
    activation: str | None = None
    psi: float = 1.0
    phi: float = 1.0
    r: float = 0.0
    s: float = 0.0
    lam: float = 0.0
    # numerics
    grid_points: int = 200
    grid_points_2d: int = 200
    offset: float | None = None
    eps: tuple[float, ...] | None = None
    times: str = "logspace(0.01, 100.0, 200)"
    # sweep
    sweep_parameter: str | None = None
    sweep_start: float = 0.0
    sweep_stop: float = 0.0
    sweep_count: int = 1
    sweep_log: bool = True
    max_mesh: int = 3000
    # simulate
    d: int = 200
    seeds: int = 10
    dt: float = 0.0
    # pencil
    pencil_x: complex = 1 + 0.2j
    pencil_y: complex = 2 + 0.2j
    pencil_d: int = 400
    pencil_seeds: int = 20
    # output
    directory: str = "."
    prefix: str = "rfflow"
    _coeffs: tuple = field(default=(), repr=False, compare=False)

    _SECTIONS = {
        "model": (("mu", "mu"), ("nu", "nu"), ("activation", "activation"), ("psi", "psi"),
                  ("phi", "phi"), ("r", "r"), ("s", "s"), ("lambda", "lam")),
        "numerics": (("grid_points", "grid_points"), ("grid_points_2d", "grid_points_2d"),
                     ("offset", "offset"), ("eps", "eps"), ("times", "times")),
        "sweep": (("parameter", "sweep_parameter"), ("start", "sweep_start"), ("stop", "sweep_stop"),
                  ("count", "sweep_count"), ("log", "sweep_log"), ("max_mesh", "max_mesh")),
        "simulate": (("d", "d"), ("seeds", "seeds"), ("dt", "dt")),
        "pencil": (("x", "pencil_x"), ("y", "pencil_y"), ("d", "pencil_d"), ("seeds", "pencil_seeds")),
        "output": (("directory", "directory"), ("prefix", "prefix")),
    }

    def __post_init__(self):
        self.validate()

    # -- validation and derived objects ------------------------------------

    def validate(self) -> None:
        has_coeffs = self.mu is not None or self.nu is not None
        if has_coeffs == (self.activation is not None):
            raise ConfigError("give exactly one of mu/nu or an activation name")
        if has_coeffs and (self.mu is None or self.nu is None):
            raise ConfigError("mu and nu must be given together")
        if self.sweep_parameter is not None and self.sweep_parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMETERS}, got {self.sweep_parameter!r}")
        if self.sweep_count < 1:
            raise ConfigError("sweep count must be positive")
        if self.sweep_parameter is not None and self.sweep_log and min(self.sweep_start, self.sweep_stop) <= 0:
            raise ConfigError("log sweeps need a positive range")
        if self.grid_points < 16 or self.grid_points_2d < 16:
            raise ConfigError("grid sizes must be at least 16")
        if self.d < 10 or self.seeds < 1 or self.dt < 0:
            raise ConfigError("simulate needs d >= 10, seeds >= 1 and dt >= 0")
        parse_times(self.times)
        for name in ("psi", "phi", "r", "s", "lam"):
            val = getattr(self, name)
            if not math.isfinite(val) or val < 0 or (name in ("psi", "phi") and val == 0):
                raise ConfigError(f"{name} must be finite and {'positive' if name in ('psi', 'phi') else 'nonnegative'}")
        if has_coeffs:
            try:
                self.model()
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            if self.mu == 0 and self.nu == 0:
                raise ConfigError("mu = nu = 0 gives identically zero features")

    def coefficients(self) -> tuple[float, float]:
        if self.activation is None:
            return float(self.mu), float(self.nu)
        if not self._coeffs:
            try:
                mu, nu, _ = hermite_coefficients(get_activation(self.activation))
            except (KeyError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
            object.__setattr__(self, "_coeffs", (mu, nu))
        return self._coeffs

    def model(self) -> ModelConfig:
        mu, nu = self.coefficients()
        try:
            return ModelConfig(mu, nu, self.psi, self.phi, self.r, self.s, self.lam)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def activation_function(self) -> Activation:
        if self.activation is not None:
            return get_activation(self.activation)
        return get_activation(f"hermite2:{self.mu!r},{self.nu!r}")

    def time_grid(self) -> np.ndarray:
        return parse_times(self.times)

    def sweep_values(self) -> np.ndarray:
        if self.sweep_parameter is None:
            raise ConfigError("no [sweep] section configured")
        if self.sweep_log:
            return np.geomspace(self.sweep_start, self.sweep_stop, self.sweep_count)
        return np.linspace(self.sweep_start, self.sweep_stop, self.sweep_count)

    def with_overrides(self, **changes) -> "RunConfig":
        clean = {k: v for k, v in changes.items() if v is not None}
        if "mu" in clean or "nu" in clean:
            clean.setdefault("activation", None)
        if "activation" in clean and clean["activation"] is not None:
            clean["mu"] = clean["nu"] = None
        try:
            return replace(self, _coeffs=(), **clean)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    # -- INI round trip ----------------------------------------------------

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for section in parser.sections():
            if section not in cls._SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            keymap = dict(cls._SECTIONS[section])
            for key, raw in parser.items(section):
                if key not in keymap:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                attr = keymap[key]
                kwargs[attr] = cls._convert(attr, types[attr], raw.strip())
        return cls(**kwargs)

    @staticmethod
    def _convert(attr, typ, raw):
        try:
            if raw == "" or raw.lower() == "none":
                return None
            if attr in ("activation", "times", "directory", "prefix", "sweep_parameter"):
                return raw
            if attr == "eps":
                return tuple(float(v) for v in raw.split(","))
            if attr == "sweep_log":
                if raw.lower() not in ("true", "false", "yes", "no", "1", "0"):
                    raise ValueError(raw)
                return raw.lower() in ("true", "yes", "1")
            if attr.startswith("pencil_x") or attr.startswith("pencil_y"):
                return complex(raw.replace(" ", ""))
            if "int" in str(typ):
                return int(raw)
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError(raw)
            return val
        except ValueError as exc:
            raise ConfigError(f"bad value {raw!r} for {attr}") from exc

    def to_ini(self) -> str:
        out = io.StringIO()
        for section, keys in self._SECTIONS.items():
            out.write(f"[{section}]\n")
            for key, attr in keys:
                val = getattr(self, attr)
                if val is None:
                    continue
                out.write(f"{key} = {_fmt(val)}\n")
            out.write("\n")
        return out.getvalue()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_ini(text)
