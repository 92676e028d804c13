"""Run configuration: hyperparameter tables and the JSON config file.

All tunable values live here rather than inside the algorithm bodies, so a
run is reproducible from its config dump alone.  Unknown keys are rejected
everywhere; silent typos in a config file are worse than a loud failure.
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field, fields

from .errors import ConfigError

__all__ = [
    "DEFAULT_HYPERPARAMETERS",
    "HYPERPARAMETER_SCHEMA",
    "RunConfig",
    "load_config",
    "dump_config",
]


# family -> {name: (type, accept, human-readable range)}
HYPERPARAMETER_SCHEMA: dict[str, dict] = {
    "stay": {},
    "logreg": {
        "l2": (float, lambda v: v >= 0.0, "[0, inf)"),
        "epochs": (int, lambda v: v >= 0, ">= 0"),
        "learning_rate": (float, lambda v: v > 0.0, "(0, inf)"),
    },
    "linear_svm": {
        "l2": (float, lambda v: v > 0.0, "(0, inf)"),
        "epochs": (int, lambda v: v >= 1, ">= 1"),
    },
    "random_forest": {
        "trees": (int, lambda v: v >= 1, ">= 1"),
        "max_depth": (int, lambda v: v >= 1, ">= 1"),
        "min_leaf": (int, lambda v: v >= 1, ">= 1"),
    },
    "adaboost": {
        "rounds": (int, lambda v: v >= 1, ">= 1"),
        "max_depth": (int, lambda v: v >= 1, ">= 1"),
        "min_leaf": (int, lambda v: v >= 1, ">= 1"),
    },
    "gradboost": {
        "rounds": (int, lambda v: v >= 0, ">= 0"),
        "learning_rate": (float, lambda v: 0.0 < v <= 1.0, "(0, 1]"),
        "max_depth": (int, lambda v: v >= 1, ">= 1"),
        "min_leaf": (int, lambda v: v >= 1, ">= 1"),
        "subsample": (float, lambda v: 0.0 < v <= 1.0, "(0, 1]"),
    },
}

DEFAULT_HYPERPARAMETERS: dict[str, dict] = {
    "stay": {},
    "logreg": {"l2": 1e-4, "epochs": 500, "learning_rate": 0.5},
    "linear_svm": {"l2": 1e-4, "epochs": 200},
    "random_forest": {"trees": 200, "max_depth": 12, "min_leaf": 1},
    "adaboost": {"rounds": 200, "max_depth": 2, "min_leaf": 1},
    "gradboost": {
        "rounds": 300,
        "learning_rate": 0.1,
        "max_depth": 3,
        "min_leaf": 1,
        "subsample": 1.0,
    },
}


def _parse_iso(name: str, value) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{name}: expected ISO date string, got {value!r}")
    try:
        dt.date.fromisoformat(value)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    return value


@dataclass
class RunConfig:
    """Everything a command run needs, loadable from one JSON file."""

    commodity: str = "onion"
    family: str = "gradboost"
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0
    alpha: float = 0.6
    b: int = 7
    f: int = 7
    cyclic_doy: bool = False
    epsilon: float = 0.0
    start: str | None = None        # alignment range; None means infer from data
    end: str | None = None
    train_end: str | None = None    # split boundaries on last-target dates
    val_end: str | None = None
    test_end: str | None = None
    alpha_grid: list = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    b_grid: list = field(default_factory=lambda: [7])
    families: list = field(default_factory=lambda: ["gradboost"])
    refit_with_validation: bool = False
    workers: int = 1
    top_k: int = 3
    synth: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if not self.commodity or not self.commodity.strip():
            raise ConfigError("commodity must be a non-empty string")
        if self.family not in HYPERPARAMETER_SCHEMA:
            raise ConfigError(
                f"family: {self.family!r} not one of {sorted(HYPERPARAMETER_SCHEMA)}"
            )
        if not isinstance(self.hyperparameters, dict):
            raise ConfigError("hyperparameters must be an object")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed: expected non-negative int, got {self.seed!r}")
        if not isinstance(self.alpha, (int, float)) or not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha: expected number in [0, 1], got {self.alpha!r}")
        for name in ("b", "f"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name}: expected int >= 1, got {v!r}")
        if not isinstance(self.cyclic_doy, bool):
            raise ConfigError(f"cyclic_doy: expected bool, got {self.cyclic_doy!r}")
        if not isinstance(self.epsilon, (int, float)) or self.epsilon < 0:
            raise ConfigError(f"epsilon: expected number >= 0, got {self.epsilon!r}")
        for name in ("start", "end", "train_end", "val_end", "test_end"):
            v = getattr(self, name)
            if v is not None:
                _parse_iso(name, v)
        if not isinstance(self.alpha_grid, list) or not self.alpha_grid:
            raise ConfigError("alpha_grid must be a non-empty list")
        for a in self.alpha_grid:
            if not isinstance(a, (int, float)) or not 0.0 <= a <= 1.0:
                raise ConfigError(f"alpha_grid: {a!r} outside [0, 1]")
        if not isinstance(self.b_grid, list) or not self.b_grid:
            raise ConfigError("b_grid must be a non-empty list")
        for v in self.b_grid:
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"b_grid: expected int >= 1, got {v!r}")
        if not isinstance(self.families, list) or not self.families:
            raise ConfigError("families must be a non-empty list")
        for fam in self.families:
            if fam not in HYPERPARAMETER_SCHEMA:
                raise ConfigError(
                    f"families: {fam!r} not one of {sorted(HYPERPARAMETER_SCHEMA)}"
                )
        if not isinstance(self.refit_with_validation, bool):
            raise ConfigError("refit_with_validation must be a bool")
        if isinstance(self.workers, bool) or not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError(f"workers: expected int >= 1, got {self.workers!r}")
        if isinstance(self.top_k, bool) or not isinstance(self.top_k, int) or self.top_k < 1:
            raise ConfigError(f"top_k: expected int >= 1, got {self.top_k!r}")
        if not isinstance(self.synth, dict):
            raise ConfigError("synth must be an object")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def split_dates(self) -> tuple[dt.date, dt.date, dt.date]:
        missing = [n for n in ("train_end", "val_end", "test_end") if getattr(self, n) is None]
        if missing:
            raise ConfigError(f"missing split boundaries: {missing}")
        return (
            dt.date.fromisoformat(self.train_end),
            dt.date.fromisoformat(self.val_end),
            dt.date.fromisoformat(self.test_end),
        )


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n"
