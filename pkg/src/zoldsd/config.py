"""Flat ``key=value`` run configuration."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .objective import ObjectiveOracle, least_squares_objective, load_libsvm, logistic_objective, quadratic_objective
from .optimizers import METHODS, PLUGINS, OptimizerConfig, PluginRule

OBJECTIVES = ("quadratic", "least_squares", "logistic")
MU_INITS = ("random_unit", "collinear", "zero")
REQUIRED = ("objective", "optimizer", "seed")


class ConfigError(ValueError):
    """Invalid configuration file or value; the message names the field."""


def fixture_path() -> Path:
    """Bundled a9a-shaped LIBSVM file (binary features, +-1 labels)."""
    return Path(str(resources.files("zoldsd") / "data" / "a9a_synth.libsvm"))


@dataclass(frozen=True)
class RunConfig:
    objective: str
    optimizer: str
    seed: int
    data: str = ""
    intercept: bool = False
    normalize_rows: bool = False
    dim: int = 16
    diag_min: float = 1.0
    diag_max: float = 1.0
    K: int = 5
    tau: float = 1e-3
    epsilon: float = 1.0
    gamma_x: float = 1e-3
    gamma_mu: float = 1e-3
    schedule: str = "constant"
    plugin: str = "sgd_momentum"
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_floor: float = 1e-8
    mu_init: str = "random_unit"
    mu_scale: float = 1.0
    reward_sign: int = -1
    normalize_zo: bool = False
    budget: int | None = None
    horizon: int | None = None
    raw: bytes = b""

    def __post_init__(self):
        check = _Checker()
        check.choice("objective", self.objective, OBJECTIVES)
        check.choice("optimizer", self.optimizer, METHODS)
        check.choice("schedule", self.schedule, ("constant", "cosine"))
        check.choice("plugin", self.plugin, PLUGINS)
        check.choice("mu_init", self.mu_init, MU_INITS)
        check.that("K", self.K >= 1, "must be a positive integer")
        learns = self.optimizer in ("ldsd", "zo_ldsd")
        check.that("K", not (learns and self.gamma_mu > 0 and self.K < 2), "must be >= 2 when gamma_mu > 0")
        check.that("tau", self.tau > 0, "must be positive")
        check.that("epsilon", self.epsilon > 0, "must be positive")
        check.that("gamma_x", self.gamma_x >= 0, "must be nonnegative")
        check.that("gamma_mu", self.gamma_mu >= 0, "must be nonnegative")
        check.that("dim", self.dim >= 1, "must be positive")
        check.that("diag_min", 0 < self.diag_min <= self.diag_max, "need 0 < diag_min <= diag_max")
        for name in ("momentum", "beta1", "beta2"):
            check.that(name, 0 <= getattr(self, name) < 1, "must lie in [0, 1)")
        check.that("adam_floor", self.adam_floor > 0, "must be positive")
        check.that("mu_scale", self.mu_scale > 0, "must be positive")
        check.that("reward_sign", self.reward_sign in (-1, 1), "must be +1 or -1")
        check.that("budget", (self.budget is None) != (self.horizon is None), "set exactly one of budget and horizon")
        check.that("budget", self.budget is None or self.budget >= 1, "must be positive")
        check.that("horizon", self.horizon is None or self.horizon >= 1, "must be positive")

    @property
    def run_id(self) -> str:
        h = hashlib.sha256(self.raw + b"\0seed=" + str(self.seed).encode())
        return h.hexdigest()[:12]

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=int(seed))

    def optimizer_config(self) -> OptimizerConfig:
        plugin = PluginRule(self.plugin, self.momentum, self.beta1, self.beta2, self.adam_floor)
        return OptimizerConfig(self.optimizer, self.K, self.tau, self.epsilon, self.gamma_x, self.gamma_mu,
                               self.schedule, plugin, self.reward_sign, self.normalize_zo)

    def objective_oracle(self) -> ObjectiveOracle:
        if self.objective == "quadratic":
            diag = np.linspace(self.diag_min, self.diag_max, self.dim)
            return quadratic_objective(diag, np.ones(self.dim))
        data = load_libsvm(self.data or fixture_path())
        if self.normalize_rows:
            data = data.normalized_rows()
        if self.intercept:
            data = data.with_intercept()
        if self.objective == "least_squares":
            return least_squares_objective(data)
        return logistic_objective(data)


class _Checker:
    def that(self, name: str, ok: bool, msg: str):
        if not ok:
            raise ConfigError(f"{name}: {msg}")

    def choice(self, name: str, value, allowed):
        self.that(name, value in allowed, f"{value!r} not in {allowed}")


_BOOL = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def _convert(name: str, text: str, typ):
    try:
        if typ is bool:
            return _BOOL[text.lower()]
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        return text
    except (ValueError, KeyError):
        raise ConfigError(f"{name}: cannot parse {text!r}") from None


_TYPES = {"seed": int, "intercept": bool, "normalize_rows": bool, "dim": int, "diag_min": float,
          "diag_max": float, "K": int, "tau": float, "epsilon": float, "gamma_x": float,
          "gamma_mu": float, "momentum": float, "beta1": float, "beta2": float, "adam_floor": float,
          "mu_scale": float, "reward_sign": int, "normalize_zo": bool, "budget": int, "horizon": int}
DEFAULT_HORIZON = 100


def parse_config(text: str, base_dir: str | Path | None = None) -> RunConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment.

    Without ``budget`` or ``horizon`` the run gets a horizon of 100 iterations.
    A relative ``data`` path is resolved against ``base_dir``.
    """
    known = {f.name for f in fields(RunConfig)} - {"raw"}
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        if key not in known:
            raise ConfigError(f"{key}: unknown key")
        if key in values:
            raise ConfigError(f"{key}: duplicate key")
        values[key] = _convert(key, val, _TYPES.get(key, str))
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"{missing[0]}: missing required key")
    if "budget" not in values and "horizon" not in values:
        values["horizon"] = DEFAULT_HORIZON
    if values.get("data") and base_dir is not None:
        p = Path(str(values["data"]))
        if not p.is_absolute():
            values["data"] = str(Path(base_dir) / p)
    return RunConfig(**values, raw=text.encode("utf-8"))


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent)
