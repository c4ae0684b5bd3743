"""Nested run configuration (YAML or JSON) with strict keys and dotted ``--override`` support."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import yaml

from entropart.datagen import GenSpec
from entropart.partition import PartitionerConfig
from entropart.trainer import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "datagen": GenSpec().to_dict(),
    "partitioner": {"num_parts": 4, "imbalance_epsilon": 0.05, "coarsen_stop": 200, "refine_passes": 10,
                    "seed": 0, "scheme": "ew", "c": 1.0, "fanout_k": 25},
    "sampler": {"enabled": True, "fraction": 0.25, "batch_size": 1024, "fanouts": [25, 25],
                "normalization": "as-written"},
    "gnn": {"hidden": 256, "lr": 1e-3, "dtype": "float32"},
    "trainer": {"num_workers": 4, "lambda": 1e-4, "patience": 5, "phase0_max_epochs": 100,
                "phase1_max_epochs": 100, "phase_switch": "auto", "switch_window": 5,
                "switch_threshold": 0.01, "switch_fraction": 0.5, "personalize": True,
                "halo_depth": 2, "seed": 0},
}


def _merge(base: dict, update: dict, where: str = "") -> dict:
    for key, val in update.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{path} must be a mapping")
            _merge(base[key], val, path + ".")
        else:
            base[key] = val
    return base


def parse_override(text: str) -> dict:
    """``a.b=value`` -> ``{"a": {"b": value}}``; the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override must look like key=value: {text!r}")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"bad override key: {key!r}")
    try:
        val = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    if isinstance(val, str):
        # YAML 1.1 reads "1e-3" as a string
        try:
            val = float(val)
        except ValueError:
            pass
    out = val
    for p in reversed(parts):
        out = {p: out}
    return out


def read_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


class RunConfig:
    def __init__(self, data: dict | None = None, overrides=()):
        self.data = copy.deepcopy(DEFAULTS)
        _merge(self.data, data or {})
        for ov in overrides:
            _merge(self.data, parse_override(ov) if isinstance(ov, str) else ov)
        self.validate()

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        return cls(read_config_file(path) if path else {}, overrides)

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    def validate(self) -> None:
        try:
            self.gen_spec()
            self.partitioner_config()
            self.train_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.data["partitioner"]["scheme"] not in ("unit", "ew"):
            raise ConfigError("partitioner.scheme must be 'unit' or 'ew'")
        if self.data["partitioner"]["c"] < 0 or self.data["partitioner"]["fanout_k"] < 1:
            raise ConfigError("partitioner.c must be >= 0 and partitioner.fanout_k >= 1")

    def gen_spec(self) -> GenSpec:
        return GenSpec(**self.data["datagen"])

    def partitioner_config(self) -> PartitionerConfig:
        p = {k: v for k, v in self.data["partitioner"].items() if k not in ("scheme", "c", "fanout_k")}
        return PartitionerConfig(**p)

    def train_config(self) -> TrainConfig:
        s, m, t = self.data["sampler"], self.data["gnn"], self.data["trainer"]
        return TrainConfig(
            num_workers=t["num_workers"], lr=m["lr"], hidden=m["hidden"], fanouts=tuple(s["fanouts"]),
            batch_size=s["batch_size"], fraction=s["fraction"], lam=t["lambda"], patience=t["patience"],
            phase0_max_epochs=t["phase0_max_epochs"], phase1_max_epochs=t["phase1_max_epochs"],
            phase_switch=t["phase_switch"], switch_window=t["switch_window"],
            switch_threshold=t["switch_threshold"], switch_fraction=t["switch_fraction"],
            sampler_enabled=s["enabled"], normalization=s["normalization"], personalize=t["personalize"],
            halo_depth=t["halo_depth"], dtype=m["dtype"], seed=t["seed"],
        )

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)
