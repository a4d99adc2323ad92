"""Run configuration: key=value text, JSON or YAML, validated up front."""

import json
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from core.errors import ConfigurationError
from core.expressions import parse_expression
from utils.logging_util import setup_logger

logger = setup_logger("config")

COMMANDS = ("verify", "solve", "galerkin", "helmholtz", "thinfilm")
SURFACES = ("sphere", "torus")
CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
PRESETS = ("killing-stationary", "mode-decay-l2", "manufactured-g", "torus-identities", "thinfilm-rates")

EXPRESSION_KEYS = {"g_expr": "scalar", "f_expr": "vector", "v0_expr": "vector",
                   "g0_expr": "scalar", "g1_expr": "scalar"}


@dataclass(frozen=True)
class RunConfig:
    command: str = "verify"
    surface: str = "sphere"
    radius: float = 1.0
    bandlimit: int = 32
    R: float = 2.0
    r: float = 1.0
    n_theta: int = 64
    n_phi: int = 64
    differentiation: str = "spectral"
    nu: float = 0.01
    gamma0: float = 0.0
    gamma1: float = 0.0
    g_expr: str = "1"
    f_expr: str = "zero()"
    v0_expr: str = "killing(0,0,1)"
    dt: float = 1e-3
    T: float = 1.0
    variant: str = "imex"
    k: int = 30
    nonlinear: bool = True
    dealias: bool = True
    snapshot_every: int = 1
    samples: int = 100
    g0_expr: str = "0"
    g1_expr: str = "1 + 0.3*Y(2,0)"
    eps_values: tuple = (0.1, 0.05, 0.025, 0.0125)
    n_radial: int = 16
    seed: int = 0x5EED
    out: str = "results"
    dump_fields: bool = False

    def to_text(self):
        """Canonical key=value serialization; parse_config(to_text()) == self."""
        return "".join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self))

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


def _convert(key, raw):
    """Convert a raw value to the declared type of ``key``; raises ValueError."""
    kind = FIELD_TYPES[key]
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("true", "yes", "1", "on"):
            return True
        if text in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int:
        if isinstance(raw, bool):
            raise ValueError(f"expected an integer, got {raw!r}")
        if isinstance(raw, float):
            if not raw.is_integer():
                raise ValueError(f"expected an integer, got {raw!r}")
            return int(raw)
        return int(str(raw).strip(), 0)
    if kind is float:
        if isinstance(raw, bool):
            raise ValueError(f"expected a number, got {raw!r}")
        return float(str(raw).strip())
    if kind is tuple:
        items = raw if isinstance(raw, (list, tuple)) else str(raw).split(",")
        return tuple(float(str(v).strip()) for v in items)
    return str(raw).strip()


def validate(cfg):
    """Every invariant violation of ``cfg`` as (key, message) pairs."""
    errors = []

    def check(ok, key, message):
        if not ok:
            errors.append((key, message))

    check(cfg.command in COMMANDS, "command", f"command must be one of {COMMANDS}")
    check(cfg.surface in SURFACES, "surface", f"surface must be one of {SURFACES}")
    if cfg.surface == "sphere":
        check(cfg.radius > 0, "radius", "sphere radius must be > 0")
        check(cfg.bandlimit >= 8, "bandlimit", "bandlimit must be >= 8")
    if cfg.surface == "torus":
        check(cfg.R > 0 and cfg.r > 0, "r", "torus radii must be > 0")
        check(cfg.r < cfg.R, "r", "torus requires r < R")
        for key in ("n_theta", "n_phi"):
            n = getattr(cfg, key)
            check(n >= 32 and n % 2 == 0, key, f"{key} must be an even integer >= 32")
        check(cfg.differentiation in ("spectral", "fd4"), "differentiation",
              "differentiation must be spectral or fd4")
        check(not (cfg.command == "solve" and cfg.variant == "imex"), "variant",
              "the imex variant requires the sphere; use variant=galerkin on the torus")
    check(cfg.nu > 0, "nu", "nu must be > 0")
    check(cfg.gamma0 >= 0, "gamma0", "gamma0 must be >= 0")
    check(cfg.gamma1 >= 0, "gamma1", "gamma1 must be >= 0")
    check(cfg.dt > 0, "dt", "dt must be > 0")
    check(cfg.T >= 0, "T", "T must be >= 0")
    check(cfg.variant in ("imex", "galerkin"), "variant", "variant must be imex or galerkin")
    check(cfg.k >= 1, "k", "k must be >= 1")
    check(cfg.snapshot_every >= 1, "snapshot_every", "snapshot_every must be >= 1")
    check(cfg.samples >= 1, "samples", "samples must be >= 1")
    check(len(cfg.eps_values) >= 1 and all(0 < e <= 1 for e in cfg.eps_values), "eps_values",
          "eps_values must be a non-empty list in (0, 1]")
    check(cfg.n_radial >= 2, "n_radial", "n_radial must be >= 2")
    check(0 <= cfg.seed < 2 ** 64, "seed", "seed must be an unsigned 64-bit integer")
    for key, kind in EXPRESSION_KEYS.items():
        try:
            expr = parse_expression(getattr(cfg, key))
        except ConfigurationError as e:
            errors.append((key, str(e)))
            continue
        if kind == "scalar" and expr.kind == "vector":
            errors.append((key, f"{key} must be a scalar expression"))
        if kind == "vector" and any(t.name == "const" for t in expr.terms):
            errors.append((key, f"{key} must be a vector expression"))
        if expr.has_balance and key != "f_expr":
            errors.append((key, "balance() is only allowed in f_expr"))
    return errors


def from_mapping(data, lines=None, violations=None):
    """Build and validate a RunConfig from raw values.

    Args:
        data: Mapping of key to raw value.
        lines: Optional mapping of key to source line number.
        violations: Violations already found while reading the source.

    Raises:
        ConfigurationError: listing every violation.
    """
    lines = lines or {}
    violations = list(violations or [])

    def where(key):
        return f"line {lines[key]}: " if key in lines else ""

    values = {}
    for key, raw in data.items():
        if key not in FIELD_TYPES:
            violations.append(f"{where(key)}unknown key {key!r}")
            continue
        try:
            values[key] = _convert(key, raw)
        except ValueError as e:
            violations.append(f"{where(key)}{key}: {e}")

    cfg = RunConfig(**values)
    for key, message in validate(cfg):
        violations.append(f"{where(key)}{message} ({key}={_format(getattr(cfg, key))})")
    if violations:
        raise ConfigurationError(violations)
    return cfg


def parse_config(text):
    """Parse UTF-8 key=value lines with '#' comments into a validated RunConfig."""
    data, lines, violations = {}, {}, []
    for number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            violations.append(f"line {number}: expected key=value, got {content!r}")
            continue
        key, value = (part.strip() for part in content.split("=", 1))
        if key in data:
            violations.append(f"line {number}: duplicate key {key!r} (first on line {lines[key]})")
            continue
        data[key] = value
        lines[key] = number
    return from_mapping(data, lines, violations)


def load_config(path):
    """Load a config file by suffix: .json, .yaml/.yml, anything else as key=value."""
    path = str(path)
    with open(path, "r", encoding="utf-8") as f:
        if path.endswith(".json"):
            data = json.load(f)
        elif path.endswith((".yaml", ".yml")):
            data = yaml.safe_load(f) or {}
        else:
            return parse_config(f.read())
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    logger.debug(f"loaded configuration from {path}")
    return from_mapping(data)


def load_preset(name):
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return load_config(CONFIG_DIR / f"{name}.yaml")


def with_overrides(cfg, **overrides):
    """Replace fields (skipping None) and validate the result again."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    if not changes:
        return cfg
    return from_mapping(dict(cfg.to_dict(), **changes))
