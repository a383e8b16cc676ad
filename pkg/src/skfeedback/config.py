"""Flat ``key = value`` experiment configs.

One assignment per line; ``#`` starts a comment. Policy arguments are
written ``policy.<name> = value`` and sweep axes ``sweep.<axis> = v1, v2``.
``rate_unit = bits`` converts ``rate`` to nats on reading; configs are
always emitted in nats.
"""
from __future__ import annotations

import math
from dataclasses import fields

from .harness import ConfigError, ExperimentConfig

_INT_KEYS = {"n", "messages", "trials", "seed"}
_FLOAT_KEYS = {"rate", "alpha", "beta", "N_star", "pe_target", "delta"}
_STR_KEYS = {"policy", "noise_mode"}
_BOOL_KEYS = {"allow_cheat"}
_KNOWN = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _BOOL_KEYS | {"message_mode", "rate_unit"}


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _bool(text: str, where: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {text!r}")


def parse_assignments(text: str, source: str = "<config>") -> dict[str, tuple[str, int]]:
    """Map key -> (raw value, line number); duplicate keys are an error."""
    out: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {body!r}")
        key, val = (part.strip() for part in body.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first on line {out[key][1]})")
        out[key] = (val, lineno)
    return out


def config_from_assignments(items: dict[str, tuple[str, int]], source: str = "<config>") -> ExperimentConfig:
    kwargs: dict = {}
    policy_args: dict = {}
    sweep: dict = {}
    unit = "nats"
    for key, (val, lineno) in items.items():
        where = f"{source}:{lineno}"
        if key.startswith("policy."):
            policy_args[key[7:]] = _number(val)
            continue
        if key.startswith("sweep."):
            values = [_number(v.strip()) for v in val.split(",") if v.strip()]
            if not values:
                raise ConfigError(f"{where}: sweep axis {key[6:]!r} has no values")
            sweep[key[6:]] = values
            continue
        if key not in _KNOWN:
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                kwargs[key] = int(val)
            elif key in _FLOAT_KEYS:
                kwargs[key] = float(val)
            elif key in _BOOL_KEYS:
                kwargs[key] = _bool(val, where)
            elif key == "message_mode":
                kwargs[key] = val if val in ("uniform", "all") else int(val)
            elif key == "rate_unit":
                if val not in ("nats", "bits"):
                    raise ConfigError(f"{where}: rate_unit must be nats or bits, got {val!r}")
                unit = val
            else:
                kwargs[key] = val
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{where}: bad value for {key}: {val!r}") from None
    if unit == "bits" and "rate" in kwargs:
        kwargs["rate"] = kwargs["rate"] * math.log(2)
    if "n" not in kwargs:
        raise ConfigError(f"{source}: missing required key 'n'")
    try:
        return ExperimentConfig(**kwargs, policy_args=policy_args, sweep=sweep)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    return config_from_assignments(parse_assignments(text, source), source)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), path)


def _emit(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    return str(val)


def emit_config(config: ExperimentConfig) -> str:
    """Text that :func:`parse_config` reads back to an equal config."""
    lines = []
    for f in fields(config):
        val = getattr(config, f.name)
        if f.name == "policy_args":
            lines += [f"policy.{k} = {_emit(v)}" for k, v in val.items()]
        elif f.name == "sweep":
            lines += [f"sweep.{k} = " + ", ".join(_emit(v) for v in vs) for k, vs in val.items()]
        elif val is not None:
            lines.append(f"{f.name} = {_emit(val)}")
    return "\n".join(lines) + "\n"
