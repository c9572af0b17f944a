"""Experiment configuration: flat ``key = value`` files plus command-line overrides.

Config files are INI-style. Section headers are optional and only group
keys for readability; every key lives in one flat namespace. Values given
on the command line win over the file.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from ..ccl import FILTER_MODES, ConsistencyWeights, FilterConfig, TemperatureConfig, TemperaturePhase
from ..trainer import TrainerConfig

log = logging.getLogger(__name__)

METHODS = ("supervised", "mean_teacher", "filtering_ccl", "temperature_ccl", "ft_ccl")
DATASETS = ("two_moons", "blobs", "circles", "csv")

# keys that only matter for some methods: key -> methods that read it
METHOD_KEYS = {
    "lambda_max": METHODS[1:],
    "ramp_epochs": METHODS[1:],
    "mc_passes": ("filtering_ccl", "temperature_ccl", "ft_ccl"),
    "beta": ("filtering_ccl", "ft_ccl"),
    "rho": ("filtering_ccl", "ft_ccl"),
    "p_max_epochs": ("filtering_ccl", "ft_ccl"),
    "filter_mode": ("filtering_ccl", "ft_ccl"),
    "temperature_phases": ("temperature_ccl", "ft_ccl"),
    "t_min": ("temperature_ccl", "ft_ccl"),
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _phases_to_text(phases) -> str:
    return ",".join(f"{p.start_epoch:g}:{p.t_base:g}:{p.t_slope:g}:{p.span:g}" for p in phases)


def parse_phases(text: str) -> tuple[TemperaturePhase, ...]:
    """``"start:T_b:T_k:S,..."`` -> phases; e.g. ``0:20:10:100,100:10:9:300``."""
    phases = []
    for chunk in text.split(","):
        parts = chunk.strip().split(":")
        if len(parts) != 4:
            raise ValueError(f"phase {chunk!r} must be start:T_b:T_k:S")
        phases.append(TemperaturePhase(*(float(p) for p in parts)))
    return tuple(phases)


@dataclass
class ExperimentConfig:
    # experiment
    method: str = "ft_ccl"
    n_seeds: int = 1
    seed: int = 0
    out: str = "runs"
    workers: int = 1
    # data
    dataset: str = "two_moons"
    n_train: int = 506
    n_test: int = 1000
    n_labeled: int = 6
    data_noise: float = 0.1
    n_classes: int = 4
    spread: float = 0.3
    circle_factor: float = 0.5
    corruption: float = 0.0
    train_csv: str = ""
    test_csv: str = ""
    # optimisation and model
    epochs: int = 50
    batch_size: int = 64
    labeled_per_batch: int = 16
    lr: float = 0.05
    momentum: float = 0.9
    hidden: str = "64,64"
    dropout: float = 0.2
    input_noise: float = 0.1
    ema_decay: float = 0.99
    n_pairs: int = 1
    independent_batches: bool = False
    # certainty-driven consistency
    mc_passes: int = 10
    lambda_max: float = 10.0
    ramp_epochs: float = 30.0
    beta: float = 8.0
    rho: float = 0.4
    p_max_epochs: int = 210
    filter_mode: str = "both"
    temperature_phases: str = _phases_to_text(TemperatureConfig().phases)
    t_min: float = 0.1
    # protocol lists
    fractions: str = "0.2,0.3,0.5"
    budgets: str = "6,20,50"
    methods: str = ",".join(METHODS)

    # -- derived views ------------------------------------------------------

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(int(h) for h in self.hidden.split(",") if h.strip())

    @property
    def fraction_list(self) -> list[float]:
        return [float(f) for f in self.fractions.split(",") if f.strip()]

    @property
    def budget_list(self) -> list[int]:
        return [int(b) for b in self.budgets.split(",") if b.strip()]

    @property
    def method_list(self) -> list[str]:
        return [m.strip() for m in self.methods.split(",") if m.strip()]

    def trainer_config(self, seed: int) -> TrainerConfig:
        """Apply the method preset; every method runs through the same trainer."""
        filt = self.method in ("filtering_ccl", "ft_ccl")
        temp = self.method in ("temperature_ccl", "ft_ccl")
        lam = 0.0 if self.method == "supervised" else self.lambda_max
        return TrainerConfig(
            epochs=self.epochs, batch_size=self.batch_size, labeled_per_batch=self.labeled_per_batch,
            ema_decay=self.ema_decay, n_pairs=self.n_pairs, seed=seed, lr=self.lr,
            momentum=self.momentum, hidden=self.hidden_sizes, dropout=self.dropout,
            input_noise=self.input_noise, mc_passes=self.mc_passes,
            filter=FilterConfig(self.beta, self.rho, self.p_max_epochs, self.filter_mode if filt else "none"),
            temperature=TemperatureConfig(parse_phases(self.temperature_phases), self.t_min, temp),
            weights=ConsistencyWeights(lam, self.ramp_epochs),
            independent_batches=self.independent_batches,
        )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        out = dataclasses.replace(self, **changes)
        out.validate()
        return out

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        def need(ok: bool, key: str, msg: str) -> None:
            if not ok:
                raise ConfigError(key, msg)

        need(self.method in METHODS, "method", f"must be one of {', '.join(METHODS)}")
        need(self.n_seeds >= 1, "n_seeds", "must be >= 1")
        need(self.workers >= 1, "workers", "must be >= 1")
        need(self.dataset in DATASETS, "dataset", f"must be one of {', '.join(DATASETS)}")
        need(self.n_train >= 2, "n_train", "must be >= 2")
        need(self.n_test >= 1 or self.dataset == "csv", "n_test", "must be >= 1")
        need(self.n_labeled >= 1, "n_labeled", "must be >= 1")
        need(self.data_noise >= 0, "data_noise", "must be >= 0")
        need(self.n_classes >= 2, "n_classes", "must be >= 2")
        need(self.spread > 0, "spread", "must be > 0")
        need(0 < self.circle_factor < 1, "circle_factor", "must be in (0,1)")
        need(0.0 <= self.corruption <= 1.0, "corruption", "must be in [0,1]")
        need(self.dataset != "csv" or bool(self.train_csv), "train_csv", "required for dataset = csv")
        need(self.dataset != "csv" or bool(self.test_csv), "test_csv", "required for dataset = csv")
        need(self.epochs >= 0, "epochs", "must be >= 0")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(1 <= self.labeled_per_batch <= self.batch_size, "labeled_per_batch", "must be in [1, batch_size]")
        need(self.lr >= 0, "lr", "must be >= 0")
        need(0 <= self.momentum < 1, "momentum", "must be in [0,1)")
        try:
            sizes = self.hidden_sizes
        except ValueError:
            raise ConfigError("hidden", "must be a comma-separated list of integers") from None
        need(all(s >= 1 for s in sizes), "hidden", "sizes must be >= 1")
        need(0 <= self.dropout < 1, "dropout", "must be in [0,1)")
        need(self.input_noise >= 0, "input_noise", "must be >= 0")
        need(0 <= self.ema_decay < 1, "ema_decay", "must be in [0,1)")
        need(self.n_pairs >= 1, "n_pairs", "must be >= 1")
        need(self.mc_passes >= 2, "mc_passes", "must be >= 2")
        need(self.lambda_max >= 0, "lambda_max", "must be >= 0")
        need(self.ramp_epochs >= 0, "ramp_epochs", "must be >= 0")
        need(self.beta > 0, "beta", "must be > 0")
        need(0 < self.rho < 1, "rho", "rho must be in (0,1)")
        need(self.p_max_epochs >= 1, "p_max_epochs", "must be >= 1")
        need(self.filter_mode in FILTER_MODES[1:], "filter_mode", "must be hard, probabilistic or both")
        need(self.t_min > 0, "t_min", "must be > 0")
        try:
            TemperatureConfig(parse_phases(self.temperature_phases), self.t_min)
        except ValueError as exc:
            raise ConfigError("temperature_phases", str(exc)) from None
        try:
            fr = self.fraction_list
        except ValueError:
            raise ConfigError("fractions", "must be a comma-separated list of numbers") from None
        need(all(0 <= f <= 1 for f in fr), "fractions", "must lie in [0,1]")
        try:
            need(all(b >= 1 for b in self.budget_list), "budgets", "must be >= 1")
        except ValueError:
            raise ConfigError("budgets", "must be a comma-separated list of integers") from None
        need(all(m in METHODS for m in self.method_list), "methods", f"entries must be in {', '.join(METHODS)}")


FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
ALIASES = {"seeds": "n_seeds", "e": "p_max_epochs", "k": "mc_passes", "alpha": "ema_decay"}


def _coerce(key: str, raw: Any) -> Any:
    kind = FIELDS[key].type
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {kind}") from None
    return text


def canonical_key(key: str) -> str:
    k = key.strip().lower().replace("-", "_")
    k = ALIASES.get(k, k)
    if k not in FIELDS:
        raise ConfigError(k, "unknown key")
    return k


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[__top__]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError("config", f"{path}: {exc}") from None
    values = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            values[canonical_key(key)] = value
    return values


def parse_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None
                 ) -> tuple[ExperimentConfig, list[str]]:
    """Resolve file values and overrides into a validated config.

    Also returns the keys that were set explicitly but have no effect under
    the chosen method (each is logged as a warning).
    """
    values: dict[str, Any] = {}
    if path is not None:
        values.update(read_config_file(path))
    for key, value in (overrides or {}).items():
        values[canonical_key(key)] = value
    kwargs = {k: _coerce(k, v) for k, v in values.items()}
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    inactive = [k for k in kwargs if k in METHOD_KEYS and cfg.method not in METHOD_KEYS[k]]
    for k in inactive:
        log.warning("key %r has no effect for method %s", k, cfg.method)
    return cfg, inactive
