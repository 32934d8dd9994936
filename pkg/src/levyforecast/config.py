"""Run configuration: JSON schema, defaults, validation and hashing.

A config file is a JSON object with these sections (all optional)::

    {
      "model":   {...ModelConfig fields...},
      "dataset": {"kind": "synthetic", "length": 30000, "seed": 0,
                  "regimes": [{"alpha": 1.8, "beta": 0, "gamma": 1, "delta": 0, "length": 500}, ...]}
                 or {"kind": "csv", "path": "prices.csv", "column": "close",
                     "timestamp_column": null, "log_returns": true},
      "windows": {"stride": 1, "split_fracs": [0.7, 0.15, 0.15], "scaling": "std"},
      "seeds": [0], "out": "runs/default",
      "evaluate": {"n_trajectories": 100, "max_cases": null, "hill_window": 200,
                   "hill_thresholds": [1.6, 1.2], "coverage_levels": [0.75, 0.9, 0.995],
                   "ql_levels": [0.1, 0.5, 0.9, 0.99]}
    }

Unknown keys are rejected. ``config_hash`` covers the dataset, windows and
model sections; seeds, output directory and evaluation options are excluded so
that they can change without invalidating trained checkpoints.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import DEFAULT_SPLIT_FRACS, SCALINGS, Regime
from .metrics import COVERAGE_LEVELS, QL_LEVELS
from .model import HEAD_KINDS, ModelConfig
from .stable import StableParams
from .tails import DEFAULT_HILL_THRESHOLDS


class ConfigError(ValueError):
    pass


DEFAULT_DATASET = {
    "kind": "synthetic",
    "length": 30000,
    "seed": 0,
    "regimes": [
        {"alpha": 1.8, "beta": 0.0, "gamma": 1.0, "delta": 0.0, "length": 500},
        {"alpha": 1.2, "beta": 0.0, "gamma": 1.0, "delta": 0.0, "length": 500},
    ],
}
DEFAULT_WINDOWS = {"stride": 1, "split_fracs": list(DEFAULT_SPLIT_FRACS), "scaling": "std"}
DEFAULT_EVALUATE = {
    "n_trajectories": 100,
    "max_cases": None,
    "hill_window": 200,
    "hill_thresholds": list(DEFAULT_HILL_THRESHOLDS),
    "coverage_levels": list(COVERAGE_LEVELS),
    "ql_levels": list(QL_LEVELS),
}
_SYNTH_KEYS = {"kind", "length", "seed", "regimes"}
_CSV_KEYS = {"kind", "path", "column", "timestamp_column", "log_returns"}
_REGIME_KEYS = {"alpha", "beta", "gamma", "delta", "length"}


def _merge(defaults: dict, given: dict, where: str) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


def _check_dataset(d: dict) -> dict:
    kind = d.get("kind", "synthetic")
    if kind == "synthetic":
        d = _merge(DEFAULT_DATASET, d, "dataset")
        if not d["regimes"]:
            raise ConfigError("synthetic dataset needs at least one regime")
        for r in d["regimes"]:
            if set(r) - _REGIME_KEYS or "alpha" not in r or "length" not in r:
                raise ConfigError(f"regime entries need alpha and length, optional beta/gamma/delta: {r}")
            try:
                StableParams(r["alpha"], r.get("beta", 0.0), r.get("gamma", 1.0), r.get("delta", 0.0))
            except ValueError as exc:
                raise ConfigError(f"invalid regime {r}: {exc}") from None
            if int(r["length"]) < 1:
                raise ConfigError("regime length must be positive")
        if int(d["length"]) < 2:
            raise ConfigError("dataset length must be at least 2")
        return d
    if kind == "csv":
        d = _merge({"kind": "csv", "path": None, "column": None, "timestamp_column": None, "log_returns": False},
                   d, "dataset")
        if not d["path"] or not d["column"]:
            raise ConfigError("csv dataset needs path and column")
        return d
    raise ConfigError(f"dataset kind must be 'synthetic' or 'csv', got {kind!r}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    dataset: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_DATASET))
    windows: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_WINDOWS))
    seeds: list = field(default_factory=lambda: [0])
    out: str = "runs/default"
    evaluate: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_EVALUATE))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        allowed = {f.name for f in fields(cls)}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        model_keys = {f.name for f in fields(ModelConfig)}
        m = d.get("model", {})
        if set(m) - model_keys:
            raise ConfigError(f"unknown model keys: {sorted(set(m) - model_keys)}")
        try:
            model = ModelConfig(**m)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model section: {exc}") from None
        windows = _merge(DEFAULT_WINDOWS, d.get("windows", {}), "windows")
        if windows["scaling"] not in SCALINGS:
            raise ConfigError(f"windows.scaling must be one of {SCALINGS}")
        if int(windows["stride"]) < 1:
            raise ConfigError("windows.stride must be positive")
        evaluate = _merge(DEFAULT_EVALUATE, d.get("evaluate", {}), "evaluate")
        if int(evaluate["n_trajectories"]) < 1:
            raise ConfigError("evaluate.n_trajectories must be positive")
        seeds = d.get("seeds", [0])
        if not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")
        return cls(model, _check_dataset(d.get("dataset", {})), windows, list(seeds),
                   str(d.get("out", "runs/default")), evaluate)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "dataset": copy.deepcopy(self.dataset),
                "windows": copy.deepcopy(self.windows), "seeds": list(self.seeds), "out": self.out,
                "evaluate": copy.deepcopy(self.evaluate)}

    def with_head(self, kind: str) -> "RunConfig":
        if kind not in HEAD_KINDS:
            raise ConfigError(f"unknown head {kind!r}; expected one of {HEAD_KINDS}")
        d = self.to_dict()
        d["model"]["head_kind"] = kind
        return RunConfig.from_dict(d)

    def regimes(self) -> list:
        return [Regime(StableParams(r["alpha"], r.get("beta", 0.0), r.get("gamma", 1.0), r.get("delta", 0.0)),
                       int(r["length"])) for r in self.dataset["regimes"]]

    def data_hash(self) -> str:
        payload = {"dataset": self.dataset, "windows": self.windows,
                   "T": self.model.context_length, "H": self.model.horizon}
        return _digest(payload)

    def config_hash(self) -> str:
        return _digest({"data": self.data_hash(), "model": self.model.to_dict()})


def _digest(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]
