"""Run configuration: an INI-style file of ``[section]`` key/value pairs.

Every key can be overridden from the command line with ``--section.key=value``;
flags win over the file. Values are coerced to the type of the default and
validated before any work starts.
"""

from __future__ import annotations

import configparser
import copy
import os
from dataclasses import dataclass
from pathlib import Path

from .augment import AugmentConfig, JitterParams, COLOR_SPACES
from .evaluation.mil import MILConfig
from .evaluation.probe import ProbeConfig
from .evaluation.splits import split_sizes
from .io_utils import config_digest
from .tissue import TilingConfig

SEED_ENV = "PATHBENCH_SEED"

DEFAULTS: dict[str, dict] = {
    "run": {"seed": 0, "jobs": 1},
    "tiling": {"patch_size": 224, "min_tissue": 0.1, "thumbnail_max_dim": 2048, "level": 0},
    "augment": {
        "rotate": True, "p_hflip": 0.5, "p_vflip": 0.5, "p_stain": 0.5,
        "brightness": 0.4, "contrast": 0.4, "saturation": 0.2, "hue": 0.1,
        "space": "lab", "max_patches": 256,
    },
    "embed": {"encoder": "toy", "dim": 64},
    "probe": {
        "epochs": 100, "lr": 0.1, "lr_min": 0.0, "momentum": 0.9, "batch_size": 64,
        "val_frac": 0.1, "ratios": "0.8,0.1,0.1", "classes": "",
    },
    "mil": {
        "epochs": 20, "lr": 1e-3, "lr_min": 0.0, "schedule": "constant", "weight_decay": 1e-2,
        "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "hidden": 32,
        "ratios": "0.8,0.1,0.1", "stratify": True, "classes": "",
    },
}
# keys that do not change any output and stay out of the config hash
_UNHASHED = {("run", "jobs")}


class ConfigError(ValueError):
    """Invalid configuration value; maps to exit status 2."""


def _coerce(section: str, key: str, raw):
    default = DEFAULTS[section][key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return text


def parse_ratios(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in str(text).split(","))
    except ValueError:
        raise ConfigError(f"bad ratios {text!r}") from None
    if len(vals) != 3:
        raise ConfigError(f"need three ratios, got {text!r}")
    try:
        split_sizes(0, vals)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return vals


def parse_classes(text: str) -> list[str]:
    return [c.strip() for c in str(text).split(",") if c.strip()]


@dataclass
class RunConfig:
    values: dict[str, dict]

    @classmethod
    def load(cls, path=None, overrides: dict[str, str] | None = None,
             seed: int | None = None) -> "RunConfig":
        values = copy.deepcopy(DEFAULTS)
        seed_given = False
        if path is not None:
            cp = configparser.ConfigParser()
            try:
                read = cp.read(path)
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
            if not read:
                raise ConfigError(f"{path}: config file not found")
            for section in cp.sections():
                for key, raw in cp.items(section):
                    cls._set(values, section, key, raw)
                    seed_given |= (section, key) == ("run", "seed")
        for dotted, raw in (overrides or {}).items():
            section, _, key = dotted.partition(".")
            cls._set(values, section, key, raw)
            seed_given |= (section, key) == ("run", "seed")
        if seed is not None:
            values["run"]["seed"] = int(seed)
        elif not seed_given and os.environ.get(SEED_ENV):
            cls._set(values, "run", "seed", os.environ[SEED_ENV])
        cfg = cls(values)
        cfg.validate()
        return cfg

    @staticmethod
    def _set(values, section: str, key: str, raw) -> None:
        key = key.replace("-", "_")
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        values[section][key] = _coerce(section, key, raw)

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def seed(self) -> int:
        return int(self.values["run"]["seed"])

    @property
    def jobs(self) -> int:
        return int(self.values["run"]["jobs"])

    def digest(self) -> str:
        hashed = {s: {k: v for k, v in kv.items() if (s, k) not in _UNHASHED}
                  for s, kv in self.values.items()}
        return config_digest(hashed)

    # -- typed views ---------------------------------------------------------
    def tiling(self) -> TilingConfig:
        t = self.values["tiling"]
        return TilingConfig(t["patch_size"], t["min_tissue"], t["thumbnail_max_dim"], t["level"], self.seed)

    def jitter(self) -> JitterParams:
        a = self.values["augment"]
        return JitterParams(a["brightness"], a["contrast"], a["saturation"], a["hue"])

    def augment(self, template=None) -> AugmentConfig:
        a = self.values["augment"]
        return AugmentConfig(a["rotate"], a["p_hflip"], a["p_vflip"], a["p_stain"], self.jitter(), template)

    def probe(self, n_classes: int | None = None) -> ProbeConfig:
        p = self.values["probe"]
        return ProbeConfig(p["epochs"], p["lr"], p["lr_min"], p["momentum"], p["batch_size"],
                           self.seed, n_classes)

    def mil(self, n_classes: int | None = None) -> MILConfig:
        m = self.values["mil"]
        return MILConfig(m["epochs"], m["lr"], m["lr_min"], m["schedule"], m["weight_decay"],
                         m["beta1"], m["beta2"], m["eps"], m["hidden"], self.seed, n_classes)

    def validate(self) -> None:
        if self.jobs < 1:
            raise ConfigError("run.jobs must be >= 1")
        if self.seed < 0:
            raise ConfigError("run.seed must be >= 0")
        a, e, p = self.values["augment"], self.values["embed"], self.values["probe"]
        if a["space"] not in COLOR_SPACES:
            raise ConfigError(f"augment.space must be one of {COLOR_SPACES}")
        if a["max_patches"] < 1:
            raise ConfigError("augment.max_patches must be >= 1")
        if e["encoder"] != "toy":
            raise ConfigError(f"unknown encoder {e['encoder']!r}; external encoders write .hemb files directly")
        if e["dim"] < 1:
            raise ConfigError("embed.dim must be >= 1")
        if not 0.0 < p["val_frac"] < 1.0:
            raise ConfigError("probe.val_frac must be in (0, 1)")
        parse_ratios(p["ratios"])
        parse_ratios(self.values["mil"]["ratios"])
        try:
            self.tiling()
            self.augment()
            self.probe()
            self.mil()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def write_config(path, cfg: RunConfig) -> None:
    cp = configparser.ConfigParser()
    for section, kv in cfg.values.items():
        cp[section] = {k: str(v) for k, v in kv.items()}
    with Path(path).open("w") as fh:
        cp.write(fh)
