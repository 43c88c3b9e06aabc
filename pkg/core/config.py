"""
Solver and experiment configuration.

Experiment configs are flat key=value files:

    family=edg
    n=10,20
    r=2
    m=0.5,1,2,4
    m_mode=oversampling
    trials=20
    seed=7
    solver.max_iter=3000

CLI flags override file values.
"""

from __future__ import annotations

import logging
import os
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from core.basis_families import FAMILIES
from core.diagnostics import C_VARIANTS
from core.errors import ConfigError

logger = logging.getLogger(__name__)

WORKERS_ENV = "BASIS_COMPLETION_WORKERS"
M_MODES = ("absolute", "oversampling", "dimT", "full")


def default_workers() -> int:
    """Worker count from BASIS_COMPLETION_WORKERS (default 1)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = int(raw)
    except ValueError as e:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got '{raw}'") from e
    return max(1, workers)


@dataclass(frozen=True)
class SolverConfig:
    """Settings of the splitting solver."""

    feas_tol: float = 1e-8
    rel_tol: float = 1e-10  # stop when the iterate stagnates
    max_iter: int = 5000
    rho: float = 1.0  # initial penalty
    adapt_rho: bool = True  # residual balancing
    balance_factor: float = 10.0
    rho_scale: float = 2.0
    check_tol: float = 1e-6  # tolerance for the subspace checks of the report

    def validate(self) -> None:
        if self.feas_tol <= 0 or self.rel_tol <= 0 or self.check_tol <= 0:
            raise ConfigError("Solver tolerances must be positive")
        if self.max_iter < 1:
            raise ConfigError(f"solver.max_iter must be >= 1, got {self.max_iter}")
        if self.rho <= 0:
            raise ConfigError(f"solver.rho must be positive, got {self.rho}")
        if self.balance_factor <= 1 or self.rho_scale <= 1:
            raise ConfigError("solver.balance_factor and solver.rho_scale must exceed 1")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment sweep over (n, r, m) with a number of trials per cell."""

    family: str = "entry"
    n: tuple[int, ...] = (10,)
    r: tuple[int, ...] = (1,)
    m: tuple[float, ...] = (1.0,)
    m_mode: str = "oversampling"  # absolute, oversampling (m / nr ceil(log n)^2), dimT, full
    trials: int = 10
    seed: int = 0
    beta: float = 1.5
    success_tol: float = 1e-4
    noise: float = 0.0  # sigma of Gaussian measurement noise
    n2: int | None = None
    weight_ratio: float = 2.0
    base_family: str = "entry"
    rank_one_count: int | None = None
    basis_path: str | None = None
    c_v: float | None = None
    c_variant: str = "proof"
    batches: int | None = None  # audit: override l
    batch_size: int | None = None  # audit: override m_i
    max_draws: int = 100_000_000
    workers: int = field(default_factory=default_workers)
    out: Path = Path("results.csv")
    solver: SolverConfig = field(default_factory=SolverConfig)

    def validate(self) -> None:
        """
        Raises:
            ConfigError: Any value out of range
        """
        if self.family not in FAMILIES:
            raise ConfigError(f"Unknown family '{self.family}' (known: {', '.join(FAMILIES)})")
        if self.m_mode not in M_MODES:
            raise ConfigError(f"Unknown m_mode '{self.m_mode}' (known: {', '.join(M_MODES)})")
        if self.c_variant not in C_VARIANTS:
            raise ConfigError(f"Unknown c_variant '{self.c_variant}'")
        for name in ("n", "r", "m"):
            grid = getattr(self, name)
            if not grid or any(v <= 0 for v in grid):
                raise ConfigError(f"Grid '{name}' must be non-empty and positive, got {grid}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")
        if self.success_tol <= 0:
            raise ConfigError(f"success_tol must be positive, got {self.success_tol}")
        if self.noise < 0:
            raise ConfigError(f"noise must be nonnegative, got {self.noise}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.family == "custom" and not self.basis_path:
            raise ConfigError("family=custom needs basis_path")
        for name in ("batches", "batch_size"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        self.solver.validate()

    def family_params(self) -> dict[str, Any]:
        """Keyword arguments for basis_families.make_basis()."""
        return {
            "n2": self.n2,
            "seed": self.seed,
            "count": self.rank_one_count,
            "weight_ratio": self.weight_ratio,
            "base_family": self.base_family,
            "path": self.basis_path,
        }


# =============================================================================
# KEY=VALUE PARSING
# =============================================================================


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in raw.split(",") if v.strip())


def _float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.split(",") if v.strip())


def _optional(cast: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(raw: str) -> Any:
        return None if raw.strip().lower() in ("", "none") else cast(raw)

    return parse


def _bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw}")


_EXPERIMENT_KEYS: dict[str, Callable[[str], Any]] = {
    "family": str.strip,
    "n": _int_list,
    "r": _int_list,
    "m": _float_list,
    "m_mode": str.strip,
    "trials": int,
    "seed": int,
    "beta": float,
    "success_tol": float,
    "noise": float,
    "n2": _optional(int),
    "weight_ratio": float,
    "base_family": str.strip,
    "rank_one_count": _optional(int),
    "basis_path": _optional(str.strip),
    "c_v": _optional(float),
    "c_variant": str.strip,
    "batches": _optional(int),
    "batch_size": _optional(int),
    "max_draws": int,
    "workers": int,
    "out": lambda raw: Path(raw.strip()),
}

_SOLVER_KEYS: dict[str, Callable[[str], Any]] = {
    "feas_tol": float,
    "rel_tol": float,
    "max_iter": int,
    "rho": float,
    "adapt_rho": _bool,
    "balance_factor": float,
    "rho_scale": float,
    "check_tol": float,
}


def parse_config_text(text: str) -> dict[str, str]:
    """Parses key=value lines; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"Line {lineno}: expected key=value, got '{line}'")
        values[key.strip()] = value.strip()
    return values


def build_config(
    values: Mapping[str, str], overrides: Mapping[str, Any] | None = None
) -> ExperimentConfig:
    """
    Builds a validated ExperimentConfig from raw key=value strings.

    Args:
        values: Raw strings (from a config file)
        overrides: Already-typed values from CLI flags; None entries are ignored
    """
    experiment: dict[str, Any] = {}
    solver: dict[str, Any] = {}

    for key, raw in values.items():
        if key.startswith("solver."):
            name = key.split(".", 1)[1]
            table, target = _SOLVER_KEYS, solver
        else:
            name, table, target = key, _EXPERIMENT_KEYS, experiment
        if name not in table:
            raise ConfigError(f"Unknown config key '{key}'")
        try:
            target[name] = table[name](raw)
        except ValueError as e:
            raise ConfigError(f"Invalid value for '{key}': {raw}") from e

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError(f"Unknown override '{key}'")
        experiment[key] = value

    known = {f.name for f in fields(ExperimentConfig)}
    cfg = ExperimentConfig(**{k: v for k, v in experiment.items() if k in known})
    if solver:
        cfg = replace(cfg, solver=replace(cfg.solver, **solver))
    cfg.validate()
    return cfg


def load_experiment_config(
    path: str | Path | None = None, overrides: Mapping[str, Any] | None = None
) -> ExperimentConfig:
    """
    Reads a key=value config file (optional) and applies CLI overrides.

    Raises:
        ConfigError: Unreadable file, unknown key or invalid value
    """
    values: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        try:
            values = parse_config_text(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e
        logger.info(f"Loaded config {path} ({len(values)} keys)")
    return build_config(values, overrides)


def config_to_text(cfg: ExperimentConfig) -> str:
    """Serializes a config back to key=value lines."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "solver":
            for sf in fields(value):
                lines.append(f"solver.{sf.name}={getattr(value, sf.name)}")
        elif isinstance(value, tuple):
            lines.append(f"{f.name}={','.join(str(v) for v in value)}")
        else:
            lines.append(f"{f.name}={'none' if value is None else value}")
    return "\n".join(lines) + "\n"
