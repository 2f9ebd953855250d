"""INI configuration files for single runs and sweeps.

A run file holds up to five sections; every key is a ``SimConfig`` field
and may appear only in its own section::

    [swarm]     n_robots dim comm_radius sigma epsilon d_min u_max
                alpha_connectivity alpha_collision decentral_split mode_band
    [sim]       duration dt behavior dynamics rng_seed arena initial_positions
                init_spacing_margin init_region
    [delay]     delay_max delay_variable heuristic heuristic_tau kappa v_max
    [behavior]  k_disconnect k_cov r_sensing max_area
    [robot]     offset wheel_limit axle_length damping_gain

Optional fields accept ``auto`` for their derived default.  ``arena`` is
``x_lo, x_hi, y_lo, y_hi`` and ``initial_positions`` is ``x, y; x, y; ...``.
A sweep file adds a ``[sweep]`` section (see ``conncbf.sweep``).
"""
from __future__ import annotations

import configparser
import dataclasses
import re
from pathlib import Path

from conncbf.sim_engine import ConfigError, SimConfig

SECTIONS = {
    "swarm": ("n_robots", "dim", "comm_radius", "sigma", "epsilon", "d_min", "u_max",
              "alpha_connectivity", "alpha_collision", "decentral_split", "mode_band"),
    "sim": ("duration", "dt", "behavior", "dynamics", "rng_seed", "arena", "initial_positions",
            "init_spacing_margin", "init_region"),
    "delay": ("delay_max", "delay_variable", "heuristic", "heuristic_tau", "kappa", "v_max"),
    "behavior": ("k_disconnect", "k_cov", "r_sensing", "max_area"),
    "robot": ("offset", "wheel_limit", "axle_length", "damping_gain"),
}
SECTION_OF = {key: sec for sec, keys in SECTIONS.items() for key in keys}

INT_FIELDS = {"n_robots", "dim", "rng_seed"}
BOOL_FIELDS = {"delay_variable", "heuristic"}
STR_FIELDS = {"behavior", "dynamics", "decentral_split"}
OPTIONAL_FIELDS = {"sigma", "heuristic_tau", "v_max", "k_disconnect", "arena",
                   "initial_positions", "init_region"}
AUTO = "auto"

_BOOLS = {"1": True, "true": True, "yes": True, "on": True,
          "0": False, "false": False, "no": False, "off": False}


def parse_bool(text: str) -> bool:
    try:
        return _BOOLS[text.strip().lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got {text!r}") from None


def parse_value(key: str, text: str):
    """Convert the text of one ``SimConfig`` field."""
    text = text.strip()
    if key in OPTIONAL_FIELDS and text.lower() in (AUTO, "none", ""):
        return None
    if key in INT_FIELDS:
        return int(text)
    if key in BOOL_FIELDS:
        return parse_bool(text)
    if key in STR_FIELDS:
        return text
    if key == "arena":
        parts = tuple(float(p) for p in text.split(","))
        if len(parts) != 4:
            raise ValueError(f"arena needs 4 numbers, got {len(parts)}")
        return parts
    if key == "initial_positions":
        return tuple(tuple(float(c) for c in pt.split(",")) for pt in text.split(";") if pt.strip())
    return float(text)


def format_value(key: str, value) -> str:
    if value is None:
        return AUTO
    if key in BOOL_FIELDS:
        return "true" if value else "false"
    if key == "arena":
        return ", ".join(repr(float(v)) for v in value)
    if key == "initial_positions":
        return "; ".join(", ".join(repr(float(c)) for c in p) for p in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _line_of(lines: list[str], section: str, key: str) -> int | None:
    current = None
    key_re = re.compile(rf"^\s*{re.escape(key)}\s*[=:]", re.IGNORECASE)
    for n, line in enumerate(lines, start=1):
        m = re.match(r"^\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
        elif current == section and key_re.match(line):
            return n
    return None


def _where(path, lines, section, key) -> str:
    n = _line_of(lines, section, key)
    return f"{path}:{n}" if n is not None else str(path)


def read_ini(path) -> tuple[configparser.ConfigParser, list[str]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror or exc}") from exc
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: malformed config: {exc}") from exc
    return cp, text.splitlines()


def fields_from_ini(cp: configparser.ConfigParser, lines, path, extra_sections=()) -> dict:
    """Typed ``SimConfig`` keyword arguments from the run sections of a parsed file."""
    values = {}
    for section in cp.sections():
        if section in extra_sections:
            continue
        if section not in SECTIONS:
            raise ConfigError(f"{_where(path, lines, section, '')}: unknown section [{section}]; "
                              f"expected one of {sorted(SECTIONS)}")
        for key, text in cp.items(section):
            where = _where(path, lines, section, key)
            if key not in SECTION_OF:
                raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
            if SECTION_OF[key] != section:
                raise ConfigError(f"{where}: key {key!r} belongs in [{SECTION_OF[key]}], not [{section}]")
            try:
                values[key] = parse_value(key, text)
            except ValueError as exc:
                raise ConfigError(f"{where}: field {key!r}: {exc}") from exc
    return values


def apply_overrides(values: dict, overrides) -> dict:
    """Apply ``key=value`` (or ``section.key=value``) strings on top of ``values``."""
    values = dict(values)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, text = (s.strip() for s in item.split("=", 1))
        if "." in key:
            section, key = key.split(".", 1)
            if SECTION_OF.get(key) != section:
                raise ConfigError(f"override {item!r}: no field {key!r} in [{section}]")
        if key not in SECTION_OF:
            raise ConfigError(f"override {item!r}: unknown field {key!r}")
        try:
            values[key] = parse_value(key, text)
        except ValueError as exc:
            raise ConfigError(f"override {item!r}: field {key!r}: {exc}") from exc
    return values


def build_config(values: dict, origin="config") -> SimConfig:
    try:
        return SimConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{origin}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{origin}: invalid value: {exc}") from exc


def parse_config(path, overrides=(), extra_sections=()) -> SimConfig:
    """Read a run config; an empty file, or ``path=None``, yields all defaults."""
    if path is None:
        return build_config(apply_overrides({}, overrides), "defaults")
    cp, lines = read_ini(path)
    values = fields_from_ini(cp, lines, path, extra_sections)
    return build_config(apply_overrides(values, overrides), str(path))


def serialize(config: SimConfig) -> str:
    """INI text that parses back to an equal config."""
    out = []
    for section, keys in SECTIONS.items():
        out.append(f"[{section}]")
        out += [f"{k} = {format_value(k, getattr(config, k))}" for k in keys]
        out.append("")
    return "\n".join(out)


def config_fields() -> list[str]:
    return [f.name for f in dataclasses.fields(SimConfig)]
