"""Experiment configuration: JSON loading, validation and budget guards."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

from ..opcore import (
    DensityMatrix,
    DimensionBudgetError,
    MatrixFormatError,
    dim_budget,
    load_operator,
    operator_from_json,
    operator_to_json,
)

MAX_DIM_BUDGET = 2**20
FIXTURE_PREFIX = "fixture:"

DEFAULT_TOLERANCES = {
    "certificate": 1e-8,
    "abs_deviation": 1e-8,
    "variance": 1e-8,
    "cumulant": 1e-6,
    "monotonicity": 1e-9,
    "psd": 1e-10,
    "log_variance": 1e-9,
    "inverse_power": 1e-8,
    "projector": 1e-9,
    "np_monotone": 1e-10,
    "oracle": 1e-10,
    "plog2": 1e-6,
    "mean": 1e-10,
}


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


def fixture_names() -> list[str]:
    root = resources.files("steinlab") / "fixtures"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_state(ref: Any, base: Path | None = None) -> DensityMatrix:
    """Resolve a state from an inline matrix, a file path or ``fixture:<name>``."""
    if isinstance(ref, DensityMatrix):
        return ref
    if isinstance(ref, dict):
        return operator_from_json(ref, source="<inline>", kind=DensityMatrix)
    if not isinstance(ref, (str, os.PathLike)):
        raise ConfigError(f"cannot interpret state reference {ref!r}")
    ref = str(ref)
    if ref.startswith(FIXTURE_PREFIX):
        name = ref[len(FIXTURE_PREFIX):]
        res = resources.files("steinlab") / "fixtures" / f"{name}.json"
        if not res.is_file():
            raise ConfigError(f"unknown fixture {name!r}; available: {', '.join(fixture_names())}")
        return operator_from_json(res.read_text(), source=ref, kind=DensityMatrix)
    path = Path(ref)
    if base is not None and not path.is_absolute():
        path = base / path
    try:
        return load_operator(path, kind=DensityMatrix)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    rho: DensityMatrix | None = None
    sigma: DensityMatrix | None = None
    n_min: int = 1
    n_max: int = 6
    epsilon: float = 0.1
    epsilon_margin: float = 0.1
    eta: float = 0.05
    seed: int = 0
    dim_budget: int = field(default_factory=dim_budget)
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("n_min", "n_max", "seed", "dim_budget"):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{name} must be an integer, got {val!r}")
        if self.n_min < 1 or self.n_min > self.n_max:
            raise ConfigError(f"need 1 <= n_min <= n_max, got {self.n_min}, {self.n_max}")
        for name in ("epsilon", "epsilon_margin", "eta"):
            val = getattr(self, name)
            if not isinstance(val, (int, float)) or not 0 < val < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {val!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not 1 <= self.dim_budget <= MAX_DIM_BUDGET:
            raise ConfigError(f"dim_budget must lie in [1, {MAX_DIM_BUDGET}]")
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ConfigError(f"unknown tolerance keys: {sorted(unknown)}")
        if (self.rho is None) != (self.sigma is None):
            raise ConfigError("rho and sigma must be given together")
        if self.rho is not None and self.rho.dim != self.sigma.dim:
            raise ConfigError(f"rho has dimension {self.rho.dim}, sigma {self.sigma.dim}")

    @property
    def n_range(self) -> range:
        return range(self.n_min, self.n_max + 1)

    @property
    def local_dim(self) -> int:
        return 2 if self.rho is None else self.rho.dim

    def tol(self, key: str) -> float:
        return self.tolerances.get(key, DEFAULT_TOLERANCES[key])

    def require_states(self) -> tuple[DensityMatrix, DensityMatrix]:
        if self.rho is None:
            raise ConfigError("this command needs rho and sigma")
        return self.rho, self.sigma

    def check_budget(self) -> None:
        """Fail fast when the largest tensor power would exceed the budget."""
        dim = self.local_dim**self.n_max
        if dim > self.dim_budget:
            raise DimensionBudgetError(
                f"{self.local_dim}^{self.n_max} = {dim} exceeds the dimension budget {self.dim_budget}")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def echo(self) -> dict:
        """JSON-ready summary of the configuration."""
        return {
            "rho": None if self.rho is None else operator_to_json(self.rho),
            "sigma": None if self.sigma is None else operator_to_json(self.sigma),
            "n_min": self.n_min,
            "n_max": self.n_max,
            "epsilon": self.epsilon,
            "epsilon_margin": self.epsilon_margin,
            "eta": self.eta,
            "seed": self.seed,
            "dim_budget": self.dim_budget,
            "tolerances": {k: self.tol(k) for k in sorted(DEFAULT_TOLERANCES)},
        }


_FIELDS = {"rho", "sigma", "n_min", "n_max", "epsilon", "epsilon_margin", "eta", "seed",
           "dim_budget", "tolerances"}


def config_from_dict(doc: dict, base: Path | None = None, **overrides) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(doc) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown configuration fields: {sorted(unknown)}")
    kw = dict(doc)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        for name in ("rho", "sigma"):
            if kw.get(name) is not None:
                kw[name] = load_state(kw[name], base)
    except MatrixFormatError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(**kw)


def load_config(path: str | os.PathLike | None = None, **overrides) -> ExperimentConfig:
    """Read a JSON config; keyword overrides (e.g. from CLI flags) win over file fields."""
    if path is None:
        return config_from_dict({}, **overrides)
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(doc, base=path.parent, **overrides)
