"""Line-oriented run configuration: ``section.key = value`` per line.

Blank lines and lines starting with ``#`` are ignored.  Every key has a
default, unknown keys are rejected, and errors cite the offending line.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _int(text):
    v = int(text, 10)
    return v


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int_list(text):
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ValueError("empty list")
    return tuple(int(t, 10) for t in items)


def _float_list(text):
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ValueError("empty list")
    return tuple(_float(t) for t in items)


def _auto(inner):
    def parse(text):
        return "auto" if text == "auto" else inner(text)
    parse.__name__ = inner.__name__
    return parse


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {'|'.join(options)}")
        return text
    return parse


def _text(text):
    if not text:
        raise ValueError("must not be empty")
    return text


def _positive(v):
    return v > 0


def _each_positive(v):
    return all(x > 0 for x in v)


def _nonneg(v):
    return v >= 0


# key -> (parser, default, range check, range message, description)
SCHEMA = {
    "meta.version": (_int, SCHEMA_VERSION, lambda v: v == SCHEMA_VERSION,
                     f"must be {SCHEMA_VERSION}", "config schema version"),
    "run.mesh_n": (_int, 8, _positive, "must be >= 1", "mesh subdivisions per side"),
    "run.M": (_int, 64, _positive, "must be >= 1", "number of time steps"),
    "run.T": (_float, 0.25, _positive, "must be > 0", "time horizon"),
    "run.mu": (_float, 1.0, _positive, "must be > 0", "viscosity"),
    "run.formulation": (_choice("u", "y", "both"), "u", None, "", "scheme to run in simulate"),
    "run.convection": (_choice("on", "off"), "on", None, "", "off gives the Stokes equations"),
    "run.samples": (_int, 1, _positive, "must be >= 1", "trajectories in simulate"),
    "run.seed": (_int, 20240601, _nonneg, "must be >= 0", "master seed"),
    "noise.j_max": (_int, 4, _positive, "must be >= 1", "modes per direction"),
    "noise.decay_r": (_float, 4.5, lambda v: v > 4.0,
                      "W^{3,2} summability violated: requires r > 4",
                      "coefficient decay (must exceed 4)"),
    "noise.scale": (_float, 0.5, _positive, "must be > 0", "noise amplitude"),
    "ladder.mode": (_choice("time", "space", "joint"), "time", None, "", "refinement coupling"),
    "ladder.formulation": (_choice("u", "y", "stokes"), "y", None, "",
                           "stokes switches convection off"),
    "ladder.mesh_levels": (_auto(_int_list), "auto", lambda v: v == "auto" or _each_positive(v),
                           "entries must be >= 1", "tested mesh levels"),
    "ladder.time_levels": (_auto(_int_list), "auto", lambda v: v == "auto" or _each_positive(v),
                           "entries must be >= 1", "tested step counts"),
    "ladder.ref_n": (_auto(_int), "auto", lambda v: v == "auto" or v > 0, "must be >= 1",
                     "reference mesh"),
    "ladder.ref_M": (_auto(_int), "auto", lambda v: v == "auto" or v > 0, "must be >= 1",
                     "reference step count"),
    "ladder.samples": (_auto(_int), "auto", lambda v: v == "auto" or v > 0, "must be >= 1",
                       "Monte Carlo samples"),
    "tail.alpha": (_float, 0.9, lambda v: 0 <= v <= 1, "must lie in [0, 1]", "rate exponent"),
    "tail.xi": (_auto(_float), "auto", lambda v: v == "auto" or v > 0, "must be > 0",
                "threshold constant; auto = coarsest median"),
    "stopping.R": (_float_list, (0.75, 0.79, 0.8, 0.9), _each_positive, "entries must be > 0",
                   "radius ladder (increasing)"),
    "stopping.K_power": (_float, 2.0, _positive, "must be > 0", "K(R) = R^K_power"),
    "stopping.clause": (_choice("s", "t", "tilde"), "s", None, "", "clause counted"),
    "stopping.samples": (_int, 100, _positive, "must be >= 1", "trajectories"),
    "output.dir": (_text, "out", None, "", "default output directory"),
}

LADDER_DEFAULTS = {
    "time": {"mesh_levels": (16,), "time_levels": (16, 32, 64, 128), "ref_n": 16,
             "ref_M": 1024, "samples": 32},
    "space": {"mesh_levels": (4, 8, 16), "time_levels": (512,), "ref_n": 32,
              "ref_M": 512, "samples": 20},
    "joint": {"mesh_levels": (4, 8, 16), "time_levels": (32, 64, 128), "ref_n": 32,
              "ref_M": 512, "samples": 20},
}


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name):
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def replace(self, **updates):
        """Copy with ``section__key=value`` overrides, validated."""
        vals = dict(self.values)
        for k, v in updates.items():
            key = k.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            vals[key] = v
            _check_range(key, v, None)
        return RunConfig(vals)

    @property
    def tau(self):
        return self.values["run.T"] / self.values["run.M"]

    def ladder(self):
        """Ladder parameters with ``auto`` entries resolved for the configured mode."""
        mode = self.values["ladder.mode"]
        out = {}
        for key, default in LADDER_DEFAULTS[mode].items():
            v = self.values[f"ladder.{key}"]
            out[key] = default if v == "auto" else v
        return out

    def hash(self):
        return hashlib.sha256(serialise(self).encode()).hexdigest()


def _check_range(key, value, lineno):
    check, msg = SCHEMA[key][2], SCHEMA[key][3]
    if check is not None and not check(value):
        where = f"line {lineno}: " if lineno is not None else ""
        raise ConfigError(f"{where}{key} = {format_value(value)}: {msg}")


def defaults():
    return RunConfig({k: spec[1] for k, spec in SCHEMA.items()})


def parse_config(text):
    vals = {k: spec[1] for k, spec in SCHEMA.items()}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        parser = SCHEMA[key][0]
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: malformed value for {key}: {value!r} ({exc})") from None
        _check_range(key, parsed, lineno)
        vals[key] = parsed
    return RunConfig(vals)


def load_config(path):
    if path is None:
        return defaults()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def format_value(v):
    if isinstance(v, tuple):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialise(cfg):
    return "".join(f"{k} = {format_value(cfg.values[k])}\n" for k in SCHEMA)


def key_table():
    """(key, default, description) rows for documentation."""
    return [(k, format_value(spec[1]), spec[4]) for k, spec in SCHEMA.items()]
