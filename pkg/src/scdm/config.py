"""INI-style run configuration with one section per module.

Precedence, lowest to highest: built-in defaults, the config file, command-line flags.
Values are typed by the default they replace; tuples are comma-separated.
"""

from __future__ import annotations

import configparser
from copy import deepcopy
from pathlib import Path

DEFAULTS: dict[str, dict] = {
    "gen": {"seed": 7, "trials": 40, "scale": "miniature", "noise": 0.1, "chromophore": "hbr"},
    "preprocess": {
        "eeg_family": "chebyshev2", "eeg_order": 4, "eeg_band": (0.5, 50.0), "eeg_zero_phase": False,
        "stopband_attenuation_db": 40.0, "eeg_target_rate": 160.0,
        "fnirs_family": "butterworth", "fnirs_order": 6, "fnirs_band": (0.01, 0.1),
        "fnirs_zero_phase": True, "fnirs_target_rate": 10.0, "car": True,
    },
    "diffusion": {"grid": "default", "seed": 0, "max_values": 200000},
    "unet": {"width": 64, "depth": 2, "activation": "silu", "attn_heads": 4, "eeg_kernel": 9,
             "eeg_time_map": "pool"},
    "schedule": {"family": "linear", "steps": 50, "beta_start": 1e-4, "beta_end": 0.2},
    "train": {"variant": "SCG(EEG)+MTR", "epochs": 30, "batch_size": 4, "learning_rate": 3e-3,
              "weight_decay": 0.0, "seed": 1, "checkpoint_every": 0},
    "synthesize": {"seed": 0, "e_mode": "closed", "posterior_noise": False},
    "evaluate": {"seed": 0, "repetitions": 5, "test_fraction": 0.3},
    "ablate": {"seeds": (0, 1, 2), "train_fraction": 0.5, "modality": "HbR"},
}


class ConfigError(ValueError):
    pass


def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in raw.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


class Config:
    def __init__(self, values: dict[str, dict] | None = None, path: str | None = None):
        self.values = deepcopy(DEFAULTS if values is None else values)
        self.path = path

    def section(self, name: str) -> dict:
        if name not in self.values:
            raise ConfigError(f"unknown config section [{name}]")
        return dict(self.values[name])

    def override(self, section: str, **kw) -> "Config":
        """Apply non-None command-line values on top of file/defaults."""
        sec = self.values.setdefault(section, {})
        for k, v in kw.items():
            if v is not None:
                sec[k] = v
        return self

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for name, sec in self.values.items():
            cp[name] = {k: ",".join(map(str, v)) if isinstance(v, tuple) else str(v) for k, v in sec.items()}
        lines = []
        for name in cp.sections():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {v}" for k, v in cp[name].items())
            lines.append("")
        return "\n".join(lines)


def load_config(path: str | Path | None = None) -> Config:
    cfg = Config()
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read_string(path.read_text())
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for name in cp.sections():
        if name not in DEFAULTS:
            raise ConfigError(f"{path}: unknown section [{name}]")
        for key, raw in cp[name].items():
            if key not in DEFAULTS[name]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{name}]")
            cfg.values[name][key] = _coerce(raw, DEFAULTS[name][key], f"[{name}] {key}")
    cfg.path = str(path)
    return cfg
