"""INI-style experiment configuration.

Every section and key is optional; missing values fall back to the
``ExperimentSpec`` defaults. See ``configs/default.ini`` for the full schema.
"""

from __future__ import annotations

import configparser
from dataclasses import fields
from pathlib import Path

from .harness import ExperimentSpec
from .mhe import ARRIVAL_STD, PROCESS_STD
from .sim import DisturbanceConfig

STATE_KEYS = tuple(PROCESS_STD)


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _noise_level(text: str):
    text = text.strip()
    if "," in text:
        return _floats(text)
    return int(text)


# (section, key) -> (spec field, parser)
_FIELDS = {
    ("experiment", "trajectory"): ("trajectory", str.strip),
    ("experiment", "noise_level"): ("noise_level", _noise_level),
    ("experiment", "seeds"): ("seeds", _ints),
    ("experiment", "estimators"): ("estimators", lambda s: tuple(s.replace(" ", "").split(","))),
    ("experiment", "nodes"): ("nodes", int),
    ("experiment", "warmup"): ("warmup", float),
    ("trajectory", "ramp"): ("ramp", float),
    ("trajectory", "hold"): ("hold", float),
    ("trajectory", "peak_speed"): ("peak_speed", float),
    ("vehicle", "mass"): ("mass", float),
    ("sensors", "rate"): ("rate", float),
    ("estimator", "max_iter"): ("max_iter", int),
    ("estimator", "arrival"): ("arrival_mode", str.strip),
    ("estimator", "payload_std"): ("payload_std", float),
    ("estimator", "payload_rate"): ("payload_rate", float),
    ("estimator", "payload_bounds"): ("payload_bounds", _floats),
    ("gp", "inducing"): ("inducing", int),
    ("gp", "train_stride"): ("gp_train_stride", int),
    ("gp", "train_noise_level"): ("gp_train_level", _noise_level),
    ("payload", "mass"): ("payload_mass", float),
    ("payload", "times"): ("payload_times", _floats),
}


def load_config(path) -> dict:
    """Parse a config file into ``ExperimentSpec`` keyword arguments."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with path.open() as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    kw = {}
    known = {sec for sec, _ in _FIELDS} | {"disturbance", "process_noise", "arrival_noise",
                                             "sensors"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}] in {path}")
        for key, raw in parser.items(section):
            try:
                if (section, key) in _FIELDS:
                    name, parse = _FIELDS[(section, key)]
                    kw[name] = parse(raw)
                elif section == "sensors" and key in ("sigma_p", "sigma_w", "sigma_a"):
                    kw.setdefault("_sigmas", {})[key] = float(raw)
                elif section == "disturbance" and key in ("linear", "quadratic"):
                    kw.setdefault("_drag", {})[key] = _floats(raw)
                elif section in ("process_noise", "arrival_noise") and key in STATE_KEYS:
                    target = "process" if section == "process_noise" else "arrival"
                    kw.setdefault(target, {})[key] = float(raw)
                else:
                    raise ConfigError(f"unknown key '{key}' in [{section}]")
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc

    sig = kw.pop("_sigmas", None)
    if sig is not None:
        if set(sig) != {"sigma_p", "sigma_w", "sigma_a"}:
            raise ConfigError("[sensors] needs all of sigma_p, sigma_w, sigma_a")
        kw["noise_level"] = (sig["sigma_p"], sig["sigma_w"], sig["sigma_a"])
    drag = kw.pop("_drag", None)
    if drag is not None:
        base = DisturbanceConfig()
        kw["disturbance"] = DisturbanceConfig(drag.get("linear", base.linear),
                                              drag.get("quadratic", base.quadratic))
    return kw


def build_spec(config_path=None, **overrides) -> ExperimentSpec:
    """Spec from an optional config file; non-None ``overrides`` win."""
    kw = load_config(config_path) if config_path else {}
    valid = {f.name for f in fields(ExperimentSpec)}
    for key, val in overrides.items():
        if key not in valid:
            raise ConfigError(f"unknown experiment setting '{key}'")
        if val is not None:
            kw[key] = val
    try:
        return ExperimentSpec(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


DEFAULTS_DOC = {
    "process_noise": PROCESS_STD,
    "arrival_noise": ARRIVAL_STD,
}
