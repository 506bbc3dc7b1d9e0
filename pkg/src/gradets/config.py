"""Flat ``key = value`` configuration with exact defaults.

Keys are ``section.name``; a ``[section]`` header line prefixes the keys that
follow it. Unknown keys are rejected and values are parsed to the type of
their default.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Tuple

DEFAULTS: Dict[str, Any] = {
    "corpus.n_utts": 20,
    "corpus.seed": 0,
    "corpus.mode_mix": 0.25,
    "corpus.bins": 80,
    "corpus.channels": 8,
    "corpus.mel_noise": 0.1,
    "corpus.emg_noise": 0.3,
    "corpus.n_test": 4,
    "encoder.lambda": 0.5,
    "encoder.widths": (64, 64),
    "encoder.window_radius": 2,
    "encoder.lr": 1e-4,
    "encoder.epochs": 100,
    "diffusion.beta0": 0.05,
    "diffusion.beta1": 20.0,
    "diffusion.t_min": 1e-3,
    "diffusion.weighting": "none",
    "diffusion.widths": (128, 128),
    "training.regime": "finetune",
    "training.lr": 1e-4,
    "training.epochs": 100,
    "training.batch": 4,
    "training.seed": 0,
    "training.lambda_d": 1.0,
    "training.max_steps": 0,
    "inference.steps": 50,
    "inference.temperature": 3.5,
    "inference.score": "net",
    "inference.wav": False,
    "inference.gl_iters": 32,
    "sweep.steps": (10, 50, 250, 1000),
    "sweep.temperatures": (1.0, 2.5, 3.5, 5.0),
}

CHOICES = {
    "diffusion.weighting": ("none", "eta"),
    "training.regime": ("finetune", "e2e"),
    "inference.score": ("net", "oracle"),
}


class ConfigError(ValueError):
    pass


def _parse(key: str, raw: str) -> Any:
    default = DEFAULTS[key]
    raw = raw.strip()
    if raw == "":
        raise ConfigError(f"{key}: empty value")
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            value = raw.lower() in ("true", "1", "yes")
        elif isinstance(default, int):
            value = int(raw)
        elif isinstance(default, float):
            value = float(raw)
        elif isinstance(default, tuple):
            kind = type(default[0])
            value = tuple(kind(x) for x in raw.replace(",", " ").split())
            if not value:
                raise ValueError(raw)
        else:
            value = raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(f"{key}: {value!r} not one of {CHOICES[key]}")
    return value


def parse_config(text: str) -> Dict[str, Any]:
    cfg = dict(DEFAULTS)
    section = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, raw = line.partition("=")
        key = key.strip()
        if section and "." not in key:
            key = f"{section}.{key}"
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        cfg[key] = _parse(key, raw)
    return cfg


def load_config(path) -> Dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def format_config(cfg: Dict[str, Any]) -> str:
    lines = []
    for key in DEFAULTS:
        value = cfg[key]
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
