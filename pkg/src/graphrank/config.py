"""Declarative run configuration with strict key checking.

A run is described by one JSON file mirroring the defaults below; unknown
keys are errors (reported with their field path) and CLI flags override the
seed list and output directory. All runtime constants default to the
standard protocol: ten iterative rounds consuming one tenth of the budget
each, ten dropout passes at rate 0.5, and a ten-point budget grid.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .evaluation import MethodOptions, RANKING_METHODS
from .graph import SbmParams
from .models import TrainConfig
from .ranker import GbdtHyper, LogisticHyper

__all__ = ["DEFAULT_CONFIG", "RunConfig", "load_config", "resolve_config", "config_hash"]


DEFAULT_CONFIG: dict = {
    "out": "runs/default",
    "graph": {
        "source": "sbm",
        "path": None,
        "sbm": {"n": 2000, "c": 5, "p_in": 0.02, "p_out": 0.002, "d": 16,
                "signal": 0.6, "noise": 2.0, "seed": 99},
    },
    "gcn": {"epochs": 30, "learning_rate": 0.05, "hidden": 64,
            "weight_decay": 5e-4, "dropout": 0.5},
    "mlp": {"epochs": 150, "learning_rate": 0.01, "hidden": 64,
            "weight_decay": 5e-4, "dropout": 0.5},
    "mc_dropout": {"passes": 10, "rate": 0.5, "average": "logits"},
    "ranker": {"classifier": "gbdt", "trees": 100, "max_depth": 4, "shrinkage": 0.1,
               "l2": 1.0, "min_child_weight": 1.0,
               "logistic_learning_rate": 1.0, "logistic_epochs": 400},
    "iteration_rounds": 10,
    "budget_grid_steps": 10,
    "methods": ["random", "entropy", "margin", "deepgini", "dropout",
                "datis", "nns", "graphrank", "oracle"],
    "variant": "complete",
    "datis": {"k": 10, "representation": "features"},
    "nns": {"lambda": 0.5},
    "distribution_bins": 20,
    "repair_budget": None,
    "seeds": [0, 1, 2, 3],
    "external_rankings": {},
}


def _merge(defaults: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(defaults[key], dict) and key != "external_rankings":
            if not isinstance(value, dict):
                raise ConfigError(f"{here} must be an object")
            out[key] = _merge(defaults[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration; ``raw`` is the fully merged dictionary."""

    raw: dict = field(repr=False)

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["out"])

    @property
    def graph_source(self) -> str:
        return self.raw["graph"]["source"]

    def sbm_params(self) -> SbmParams:
        try:
            return SbmParams(**self.raw["graph"]["sbm"])
        except (TypeError, ValueError) as err:
            raise ConfigError(f"graph.sbm: {err}") from err

    @property
    def graph_dir(self) -> Path:
        path = self.raw["graph"]["path"]
        if path is None:
            raise ConfigError("graph.path is required when graph.source is 'dir'")
        return Path(path)

    def _train_config(self, block: str) -> TrainConfig:
        try:
            return TrainConfig(seed=0, **self.raw[block])
        except (TypeError, ValueError) as err:
            raise ConfigError(f"{block}: {err}") from err

    @property
    def gcn(self) -> TrainConfig:
        return self._train_config("gcn")

    @property
    def mlp(self) -> TrainConfig:
        return self._train_config("mlp")

    @property
    def mc_passes(self) -> int:
        return int(self.raw["mc_dropout"]["passes"])

    @property
    def mc_rate(self) -> float:
        return float(self.raw["mc_dropout"]["rate"])

    @property
    def mc_average(self) -> str:
        return self.raw["mc_dropout"]["average"]

    @property
    def seeds(self) -> list[int]:
        return [int(s) for s in self.raw["seeds"]]

    @property
    def methods(self) -> list[str]:
        return list(self.raw["methods"])

    @property
    def steps(self) -> int:
        return int(self.raw["budget_grid_steps"])

    @property
    def bins(self) -> int:
        return int(self.raw["distribution_bins"])

    @property
    def repair_budget(self):
        return self.raw["repair_budget"]

    @property
    def external_rankings(self) -> dict:
        return dict(self.raw["external_rankings"])

    def gbdt_hyper(self) -> GbdtHyper:
        r = self.raw["ranker"]
        try:
            return GbdtHyper(trees=r["trees"], max_depth=r["max_depth"],
                             shrinkage=r["shrinkage"], l2=r["l2"],
                             min_child_weight=r["min_child_weight"])
        except ValueError as err:
            raise ConfigError(f"ranker: {err}") from err

    def method_options(self, variant: str | None = None) -> MethodOptions:
        backend = self.raw["ranker"]["classifier"]
        if backend not in ("gbdt", "logistic"):
            raise ConfigError(f"ranker.classifier must be 'gbdt' or 'logistic', "
                              f"got {backend!r}")
        hyper = (self.gbdt_hyper() if backend == "gbdt" else
                 LogisticHyper(learning_rate=self.raw["ranker"]["logistic_learning_rate"],
                               epochs=self.raw["ranker"]["logistic_epochs"]))
        return MethodOptions(
            rounds=int(self.raw["iteration_rounds"]),
            hyper=hyper,
            backend=backend,
            variant=variant or self.raw["variant"],
            datis_k=int(self.raw["datis"]["k"]),
            datis_representation=self.raw["datis"]["representation"],
            nns_lambda=float(self.raw["nns"]["lambda"]),
        )

    def validate(self) -> "RunConfig":
        if self.graph_source not in ("sbm", "dir"):
            raise ConfigError(f"graph.source must be 'sbm' or 'dir', "
                              f"got {self.graph_source!r}")
        if self.graph_source == "sbm":
            self.sbm_params()
        else:
            self.graph_dir
        _ = self.gcn, self.mlp
        if self.mc_passes < 1:
            raise ConfigError("mc_dropout.passes must be >= 1")
        if not 0.0 <= self.mc_rate < 1.0:
            raise ConfigError("mc_dropout.rate must lie in [0, 1)")
        if self.mc_average not in ("logits", "probs"):
            raise ConfigError("mc_dropout.average must be 'logits' or 'probs'")
        if self.raw["variant"] not in ("aw", "aw_ag", "aw_ag_en", "complete"):
            raise ConfigError(f"variant must be one of aw/aw_ag/aw_ag_en/complete, "
                              f"got {self.raw['variant']!r}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.steps < 1:
            raise ConfigError("budget_grid_steps must be >= 1")
        known = set(RANKING_METHODS) | {"graphrank"} | set(self.external_rankings)
        for m in self.methods:
            if m not in known:
                raise ConfigError(f"methods: unknown method {m!r}")
        self.method_options()
        return self


def resolve_config(overrides: dict | None = None) -> RunConfig:
    return RunConfig(raw=_merge(DEFAULT_CONFIG, overrides or {})).validate()


def load_config(path=None, out=None, seed=None) -> RunConfig:
    """Load a config file, apply CLI overrides, validate."""
    overrides: dict = {}
    if path is not None:
        try:
            overrides = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from err
        if not isinstance(overrides, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    cfg = RunConfig(raw=_merge(DEFAULT_CONFIG, overrides))
    if out is not None:
        cfg.raw["out"] = str(out)
    if seed is not None:
        cfg.raw["seeds"] = [int(seed)]
    return cfg.validate()


def config_hash(cfg: RunConfig) -> str:
    """Stable digest of everything that affects artifacts (output dir aside)."""
    payload = copy.deepcopy(cfg.raw)
    payload.pop("out", None)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
