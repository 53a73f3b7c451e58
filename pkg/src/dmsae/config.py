"""Experiment configuration: an INI file with a fixed schema.

Sections and keys (unknown ones are rejected)::

    [data]        forward_fill_curves
    [assets]      <asset name> = <price csv>            (one line per asset)
    [curves]      vix = <csv>, yield = <csv>            (both optional)
    [experiment]  horizons, windows, lags, model_classes, v, v0, v1,
                  families, lambdas, powers, methods,
                  validation_start, test_start, test_end,
                  output_dir, mdd_mode, dump_losses
    [daa]         cap (capped | uncapped | both), assets, lookback
    [cas]         assets, vix_asset, kstar (3k and/or 6k)

List values are comma separated. Relative paths resolve against the config
file's directory.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import pandas as pd

from .errors import ConfigError
from .ingest import CURVE_KINDS
from .losses import DEFAULT_LAMBDAS, DEFAULT_POWERS, FAMILIES, LossConfig, loss_grid
from .models import DEFAULT_LAGS, DEFAULT_WINDOWS, ModelClass
from .strategy import MDD_MODES

ALL_METHODS = ("dms", "ae", "fixed")
CLASS_NAMES = {"ar": ModelClass.AR, "slope": ModelClass.SLOPE, "shortlong": ModelClass.SHORT_LONG}
KSTAR_CHOICES = {"3k": 3, "6k": 6}


@dataclass(frozen=True)
class ExperimentConfig:
    assets: dict[str, Path]
    curves: dict[str, Path] = field(default_factory=dict)
    forward_fill_curves: bool = False
    horizons: int = 5
    windows: tuple[int, ...] = DEFAULT_WINDOWS
    lags: tuple[int, ...] = DEFAULT_LAGS
    model_classes: tuple[str, ...] = ("ar", "slope", "shortlong")
    v: int = 100
    v0: int = 50
    v1: int = 50
    families: tuple[str, ...] = FAMILIES
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    powers: tuple[float, ...] = DEFAULT_POWERS
    methods: tuple[str, ...] = ALL_METHODS
    validation_start: str | None = None
    test_start: str | None = None
    test_end: str | None = None
    output_dir: Path = Path("out")
    mdd_mode: str = "cumulative"
    dump_losses: bool = False
    daa_cap: str = "both"
    daa_assets: tuple[str, ...] = ()
    daa_lookback: int = 252
    cas_assets: tuple[str, ...] = ()
    vix_asset: str | None = None
    kstar: tuple[str, ...] = ("3k", "6k")

    def __post_init__(self) -> None:
        if not self.assets:
            raise ConfigError("at least one asset is required")
        if self.horizons < 1:
            raise ConfigError("horizons must be >= 1")
        if self.v0 + self.v1 != self.v or self.v0 < 1 or self.v1 < 1:
            raise ConfigError(f"need v0 + v1 == v with v0, v1 >= 1 (v={self.v}, v0={self.v0}, v1={self.v1})")
        for name in self.curves:
            if name not in CURVE_KINDS:
                raise ConfigError(f"unknown curve {name!r}; expected one of {CURVE_KINDS}")
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ConfigError(f"unknown method {m!r}")
        for c in self.model_classes:
            if c not in CLASS_NAMES:
                raise ConfigError(f"unknown model class {c!r}; expected {sorted(CLASS_NAMES)}")
        if self.mdd_mode not in MDD_MODES:
            raise ConfigError(f"mdd_mode must be one of {MDD_MODES}")
        if self.daa_cap not in ("capped", "uncapped", "both"):
            raise ConfigError("daa cap must be capped, uncapped or both")
        for a in (*self.daa_assets, *self.cas_assets):
            if a not in self.assets:
                raise ConfigError(f"asset {a!r} is not listed under [assets]")
        if self.cas_assets and self.vix_asset not in self.assets:
            raise ConfigError("cross-asset strategies need vix_asset listed under [assets]")
        for ks in self.kstar:
            if ks not in KSTAR_CHOICES:
                raise ConfigError(f"kstar must be 3k or 6k, got {ks!r}")
        for label in ("validation_start", "test_start", "test_end"):
            value = getattr(self, label)
            if value is not None:
                try:
                    pd.Timestamp(value)
                except ValueError:
                    raise ConfigError(f"{label}: bad date {value!r}") from None
        try:
            self.loss_configs(1)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def classes(self) -> tuple[ModelClass, ...]:
        return tuple(CLASS_NAMES[c] for c in self.model_classes)

    def loss_configs(self, k: int) -> list[LossConfig]:
        return loss_grid(self.families, self.lambdas, self.powers, v=self.v, k=k)

    def adaptive_methods(self) -> tuple[str, ...]:
        return tuple(m for m in self.methods if m != "fixed")

    def caps(self) -> tuple[str, ...]:
        return ("capped", "uncapped") if self.daa_cap == "both" else (self.daa_cap,)

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def canonical_text(self) -> str:
        """Stable text rendering used for the manifest hash.

        File locations are left out (data files are hashed by content in the
        manifest) so the same experiment hashes the same from any directory.
        """
        lines = []
        for f in fields(self):
            if f.name == "output_dir":
                continue
            value = getattr(self, f.name)
            if isinstance(value, dict):
                value = ",".join(value)
            elif isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def _split(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in _split(text))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in _split(text))


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_EXPERIMENT_KEYS: dict[str, tuple[str, Callable]] = {
    "horizons": ("horizons", int),
    "windows": ("windows", _ints),
    "lags": ("lags", _ints),
    "model_classes": ("model_classes", lambda s: tuple(x.lower() for x in _split(s))),
    "v": ("v", int),
    "v0": ("v0", int),
    "v1": ("v1", int),
    "families": ("families", lambda s: tuple(_split(s))),
    "lambdas": ("lambdas", _floats),
    "powers": ("powers", _floats),
    "methods": ("methods", lambda s: tuple(x.lower() for x in _split(s))),
    "validation_start": ("validation_start", str.strip),
    "test_start": ("test_start", str.strip),
    "test_end": ("test_end", str.strip),
    "output_dir": ("output_dir", str.strip),
    "mdd_mode": ("mdd_mode", str.strip),
    "dump_losses": ("dump_losses", _bool),
}
_DAA_KEYS = {
    "cap": ("daa_cap", str.strip),
    "assets": ("daa_assets", lambda s: tuple(_split(s))),
    "lookback": ("daa_lookback", int),
}
_CAS_KEYS = {
    "assets": ("cas_assets", lambda s: tuple(_split(s))),
    "vix_asset": ("vix_asset", str.strip),
    "kstar": ("kstar", lambda s: tuple(x.lower() for x in _split(s))),
}
_DATA_KEYS = {"forward_fill_curves": ("forward_fill_curves", _bool)}
SECTIONS = ("data", "assets", "curves", "experiment", "daa", "cas")


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate an experiment file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str  # asset names keep their case
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"{path}: unknown sections {unknown}")
    base = path.parent

    def resolve(p: str) -> Path:
        q = Path(p.strip()).expanduser()
        return q if q.is_absolute() else (base / q)

    kwargs: dict = {}
    if parser.has_section("assets"):
        kwargs["assets"] = {name: resolve(value) for name, value in parser.items("assets")}
    if parser.has_section("curves"):
        kwargs["curves"] = {name.lower(): resolve(value) for name, value in parser.items("curves")}
    for section, table in (("data", _DATA_KEYS), ("experiment", _EXPERIMENT_KEYS), ("daa", _DAA_KEYS), ("cas", _CAS_KEYS)):
        if not parser.has_section(section):
            continue
        for key, raw in parser.items(section):
            if key not in table:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            name, convert = table[key]
            try:
                kwargs[name] = convert(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: [{section}] {key}: {exc}") from None
    if "output_dir" in kwargs:
        kwargs["output_dir"] = resolve(kwargs["output_dir"])
    else:
        kwargs["output_dir"] = base / "out"
    if "assets" not in kwargs:
        raise ConfigError(f"{path}: missing [assets] section")
    return ExperimentConfig(**kwargs)
