"""Run configuration: a sectioned key/value file, strictly validated.

One config file drives one CLI run. Unknown sections or keys are rejected
so typos fail loudly, CLI flags override config keys, and every command
writes the fully resolved config (defaults materialized) next to its
outputs before doing any work.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError

_REQUIRED = object()


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _parse_opt_float(text: str):
    t = text.strip()
    return None if t == "" else float(t)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


# (parser, default); _REQUIRED defaults must appear in the file or flags
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "seed": (int, 0),
        "out": (str, _REQUIRED),
    },
    "dataset": {
        "kind": (str, "identity"),
        "num_classes": (int, 10),
        "per_class": (int, 100),
        "input_dim": (int, 24),
        "center_spread": (float, 0.5),
        "base_noise": (float, 0.1),
        "corrupt_fraction": (float, 0.0),
        "corruption_scale": (float, 0.0),
        # regression task
        "n": (int, 2000),
        "f": (str, "affine:1.0,0.0"),
        "sigma": (str, "affine:0.5,0.1"),
        "x_min": (float, 0.0),
        "x_max": (float, 1.0),
    },
    "model": {
        "hidden_dim": (int, 64),
        "embed_dim": (int, 16),
    },
    "train": {
        "mode": (str, "baseline"),
        "dataset": (str, _REQUIRED),
        "steps": (int, 1000),
        "batch_size": (int, 64),
        "momentum": (float, 0.9),
        "weight_decay": (float, 1e-4),
        "base_lr": (float, 0.0),
        "max_lr": (float, 0.05),
        "variant": (str, "am-softmax"),
        "margin": (_parse_opt_float, None),
        "scale": (_parse_opt_float, None),
        "normalize_features": (_parse_bool, False),
        "lambda": (float, 0.01),
        "baseline_checkpoint": (str, ""),
        "debug_zero_eps": (_parse_bool, False),
    },
    "eval": {
        "checkpoint": (str, _REQUIRED),
        "dataset": (str, _REQUIRED),
        "metric": (str, "cosine"),
        "fpr_targets": (_parse_float_list, (1e-5, 1e-4, 1e-3)),
        "pair_cap": (int, 200000),
    },
    "analyze": {
        "baseline_checkpoint": (str, _REQUIRED),
        "dul_checkpoint": (str, _REQUIRED),
        "dataset": (str, _REQUIRED),
        "blur_levels": (_parse_float_list, (0.0, 0.5, 1.0, 2.0, 4.0)),
        "probe_pairs": (int, 32),
    },
    "sweep": {
        "kind": (str, "lambda"),
        "values": (_parse_float_list, _REQUIRED),
        "seeds": (int, 1),
    },
}

# sections each command reads (and therefore resolves and re-emits)
COMMAND_SECTIONS = {
    "gen": ("run", "dataset"),
    "train": ("run", "model", "train"),
    "eval": ("run", "eval"),
    "analyze": ("run", "analyze"),
    "sweep": ("run", "dataset", "model", "train", "eval", "sweep"),
}


class RunConfig:
    """Typed view over the resolved sections of one run."""

    def __init__(self, command: str, sections: dict[str, dict]):
        self.command = command
        self.sections = sections

    def get(self, section: str, key: str):
        return self.sections[section][key]

    def render(self) -> str:
        lines = []
        for section in sorted(self.sections):
            lines.append(f"[{section}]")
            for key in sorted(self.sections[section]):
                lines.append(f"{key} = {_fmt(self.sections[section][key])}")
            lines.append("")
        return "\n".join(lines)


def load_config(path, command: str, overrides: dict | None = None) -> RunConfig:
    """Parse, validate, and resolve the config file for one command.

    ``overrides`` maps (section, key) to values already typed, taking
    precedence over the file (this is how CLI flags win).
    """
    if command not in COMMAND_SECTIONS:
        raise ConfigError(f"unknown command {command!r}")
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    overrides = overrides or {}
    resolved: dict[str, dict] = {}
    for section in COMMAND_SECTIONS[command]:
        resolved[section] = {}
        for key, (parse, default) in SCHEMA[section].items():
            if (section, key) in overrides and overrides[(section, key)] is not None:
                resolved[section][key] = overrides[(section, key)]
                continue
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    resolved[section][key] = parse(raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc
            elif default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r} in section [{section}]")
            else:
                resolved[section][key] = default
    return RunConfig(command=command, sections=resolved)


def write_resolved_config(cfg: RunConfig, out_dir) -> Path:
    """Atomically write the resolved config next to the run outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / "resolved_config.ini"
    tmp = out_dir / ".resolved_config.ini.tmp"
    tmp.write_text(cfg.render(), encoding="utf-8")
    os.replace(tmp, target)
    return target


def derive_seed(base: int, *keys) -> int:
    """Stable sub-seed derivation for sweep grid points and repeats.

    String keys hash through sha256 so the derivation is reproducible
    across processes.
    """
    material = [int(base) & 0xFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            material.append(int.from_bytes(hashlib.sha256(k.encode()).digest()[:4], "little"))
        else:
            material.append(int(k) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(material).generate_state(1, np.uint32)[0])
