import os
from dataclasses import dataclass, fields
from typing import Optional

from .core import FitSettings
from .errors import DataError

DEFAULT_SEED = 42
SEED_ENV = "MSDA_SEED"


def default_seed() -> int:
    """Seed from MSDA_SEED when set, else 42."""
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise DataError(f"{SEED_ENV} must be an integer, got {raw!r}")


@dataclass
class RunConfig:
    subcommand: str = ""
    input: Optional[str] = None
    output: Optional[str] = None
    model: Optional[str] = None
    path_output: Optional[str] = None
    label_column: str = "-1"
    no_header: bool = False
    label_order: Optional[str] = None
    baseline: Optional[str] = None

    n_lambda: int = 100
    lambda_min_ratio: float = 0.05
    folds: int = 5
    tol: float = 1e-6
    max_sweeps: int = 1000
    seed: Optional[int] = None
    standardize: bool = True
    screen: Optional[int] = None
    lam: Optional[float] = None
    cov_mode: str = "auto"
    uniform_priors: bool = False
    max_active: Optional[int] = None
    jobs: Optional[int] = None

    model_id: Optional[str] = None
    spec_file: Optional[str] = None
    replicates: int = 50
    tuning: str = "validation"
    fixed_u: bool = False
    p: Optional[int] = None
    n: int = 100
    grid: int = 20
    plot: bool = False

    verbose: bool = False
    quiet: bool = False

    @classmethod
    def from_namespace(cls, ns) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in vars(ns).items() if k in known}
        config = cls(**values)
        if config.seed is None:
            config.seed = default_seed()
        return config

    @property
    def label_column_value(self):
        """Header name, or a 0-based position when the option parses as an integer."""
        try:
            return int(self.label_column)
        except ValueError:
            return self.label_column

    @property
    def label_order_values(self):
        if not self.label_order:
            return None
        return [v.strip() for v in self.label_order.split(",")]

    def settings(self) -> FitSettings:
        return FitSettings(standardize=self.standardize, tol=self.tol, max_sweeps=self.max_sweeps,
                           cov_mode=self.cov_mode, uniform_priors=self.uniform_priors,
                           max_active=self.max_active)

    def validate(self) -> None:
        if self.n_lambda < 1:
            raise DataError("--n-lambda must be >= 1")
        if not 0 < self.lambda_min_ratio < 1:
            raise DataError("--lambda-min-ratio must lie in (0, 1)")
        if self.folds < 2:
            raise DataError("--folds must be >= 2")
        if not self.tol > 0:
            raise DataError("--tol must be > 0")
        if self.max_sweeps < 1:
            raise DataError("--max-sweeps must be >= 1")
        if self.screen is not None and self.screen < 1:
            raise DataError("--screen must be >= 1")
        if self.lam is not None and not self.lam >= 0:
            raise DataError("--lambda must be >= 0")
        if self.max_active is not None and self.max_active < 1:
            raise DataError("--max-active must be >= 1")
        if self.jobs is not None and self.jobs < 1:
            raise DataError("--jobs must be >= 1")
        if self.replicates < 1:
            raise DataError("--replicates must be >= 1")
        if self.grid < 1:
            raise DataError("--grid must be >= 1")
        if self.cov_mode not in ("auto", "dense", "on-demand"):
            raise DataError(f"unknown covariance mode {self.cov_mode!r}")
        if self.tuning not in ("validation", "cv"):
            raise DataError(f"unknown tuning mode {self.tuning!r}")
