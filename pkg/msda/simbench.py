"""
Simbench module - simulation models, the Bayes oracle and replicated studies.

Each model fixes coefficient vectors β_k and a covariance Σ and sets the
class means to μ_k = Σβ_k, so the true discriminant directions are
β_k − β_1 and their row support is known.
"""

import json
import math
import os
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy import linalg, signal

from .classify import FittedClassifier, error_rate, fit_projected_lda, predict, projected_precision
from .core import FitSettings, fit_path
from .data_model import LabeledDataset
from .errors import DataError
from .modelsel import SelectionMetrics, cross_validate, selection_metrics, validation_select
from .workers import parallel_map

DEFAULT_P = 800
TRAIN_PER_CLASS = 75
TEST_SIZE = 1000
BAYES_TEST_SIZE = 100_000
BAYES_COEFFICIENT_DRAWS = 40
BOOTSTRAP_RESAMPLES = 200

# rows per batch when drawing large test sets
_CHUNK = 10_000

RandomLike = Union[int, np.random.Generator, None]


def _rng(seed: RandomLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class CovarianceStructure(ABC):
    p: int = 0

    @abstractmethod
    def dense(self) -> np.ndarray:
        pass

    @abstractmethod
    def apply(self, B: np.ndarray) -> np.ndarray:
        """Σ @ B without forming Σ when the structure allows it."""
        pass

    @abstractmethod
    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        """m zero-mean rows from N(0, Σ)."""
        pass

    @abstractmethod
    def describe(self) -> str:
        pass


class ARCovariance(CovarianceStructure):
    """σ_jk = ρ^|j−k|."""

    def __init__(self, rho: float, p: int):
        if not -1.0 < rho < 1.0:
            raise DataError(f"AR correlation must lie in (-1, 1), got {rho}")
        self.rho = float(rho)
        self.p = int(p)

    def dense(self) -> np.ndarray:
        return linalg.toeplitz(self.rho ** np.arange(self.p))

    def apply(self, B: np.ndarray) -> np.ndarray:
        return self.dense() @ B

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        s = math.sqrt(1.0 - self.rho ** 2)
        z = rng.standard_normal((m, self.p))
        # x_0 = z_0 and x_t = ρ x_{t−1} + s z_t keep unit variance along the row
        z[:, 0] /= s
        return signal.lfilter([s], [1.0, -self.rho], z, axis=1)

    def describe(self) -> str:
        return f"AR({self.rho:g})"


class CSCovariance(CovarianceStructure):
    """Unit diagonal and constant off-diagonal ρ."""

    def __init__(self, rho: float, p: int):
        if not 0.0 <= rho < 1.0:
            raise DataError(f"CS correlation must lie in [0, 1), got {rho}")
        self.rho = float(rho)
        self.p = int(p)

    def dense(self) -> np.ndarray:
        return (1.0 - self.rho) * np.eye(self.p) + self.rho

    def apply(self, B: np.ndarray) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        return (1.0 - self.rho) * B + self.rho * B.sum(axis=0, keepdims=True)

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        shared = rng.standard_normal((m, 1))
        noise = rng.standard_normal((m, self.p))
        return math.sqrt(self.rho) * shared + math.sqrt(1.0 - self.rho) * noise

    def describe(self) -> str:
        return f"CS({self.rho:g})"


class BlockCSCovariance(CovarianceStructure):
    """Block diagonal with equal CS(ρ) blocks."""

    def __init__(self, rho: float, block_size: int, n_blocks: int):
        if not 0.0 <= rho < 1.0:
            raise DataError(f"CS correlation must lie in [0, 1), got {rho}")
        if block_size < 1 or n_blocks < 1:
            raise DataError("block_size and n_blocks must be >= 1")
        self.rho = float(rho)
        self.block_size = int(block_size)
        self.n_blocks = int(n_blocks)
        self.p = self.block_size * self.n_blocks
        self._block = CSCovariance(rho, block_size)

    def dense(self) -> np.ndarray:
        return linalg.block_diag(*[self._block.dense()] * self.n_blocks)

    def apply(self, B: np.ndarray) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        blocks = B.reshape(self.n_blocks, self.block_size, -1)
        out = (1.0 - self.rho) * blocks + self.rho * blocks.sum(axis=1, keepdims=True)
        return out.reshape(B.shape)

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        shared = rng.standard_normal((m, self.n_blocks))
        noise = rng.standard_normal((m, self.p))
        return (math.sqrt(self.rho) * np.repeat(shared, self.block_size, axis=1)
                + math.sqrt(1.0 - self.rho) * noise)

    def describe(self) -> str:
        return f"I{self.n_blocks} x CS({self.rho:g}) blocks of {self.block_size}"


@dataclass
class ModelSpec:
    model_id: str
    K: int
    beta: np.ndarray                # p x K
    cov: CovarianceStructure
    random_coefficients: bool = False
    mu: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.shape != (self.cov.p, self.K):
            raise DataError(f"beta must be {self.cov.p} x {self.K}, got {self.beta.shape}")
        if self.K < 2:
            raise DataError("a model needs at least two classes")
        self.mu = self.cov.apply(self.beta)
        gap = np.max(np.abs(self.mu - self.cov.dense() @ self.beta))
        if gap > 1e-10:
            raise DataError(f"class means disagree with Σβ by {gap:.3g}")

    @property
    def p(self) -> int:
        return self.cov.p

    @property
    def theta(self) -> np.ndarray:
        """True discriminant directions β_k − β_1, k = 2..K."""
        return self.beta[:, 1:] - self.beta[:, [0]]

    @property
    def true_support(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.theta != 0.0, axis=1))

    def redrawn(self, rng: np.random.Generator) -> "ModelSpec":
        """Same model with fresh random coefficients (identity otherwise)."""
        if not self.random_coefficients:
            return self
        return make_model(int(self.model_id), self.p, u_rng=rng)


def make_model(model_id: int, p: int = DEFAULT_P, u_rng: RandomLike = None) -> ModelSpec:
    """Built-in simulation models 1..6.

    Models 3 and 4 draw u_jk ~ Unif[−¼, ¼] from `u_rng` (seed 0 when omitted).
    """
    try:
        model_id = int(model_id)
    except (TypeError, ValueError):
        raise DataError(f"invalid model id {model_id!r}")
    if model_id not in range(1, 7):
        raise DataError(f"invalid model id {model_id}; built-in models are 1..6")

    if model_id == 1:
        K = 4
        beta = np.zeros((p, K))
        for k in range(K):
            beta[2 * k:2 * k + 2, k] = 1.6
        return ModelSpec("1", K, beta, ARCovariance(0.5, p))

    if model_id == 2:
        K = 6
        if p % 5:
            raise DataError("model 2 needs p divisible by 5")
        beta = np.zeros((p, K))
        for k in range(K):
            beta[2 * k:2 * k + 2, k] = 2.5
        return ModelSpec("2", K, beta, BlockCSCovariance(0.5, p // 5, 5))

    if model_id in (3, 4):
        K = 4
        u = _rng(0 if u_rng is None else u_rng).uniform(-0.25, 0.25, size=(4, K))
        beta = np.zeros((p, K))
        beta[:4] = np.arange(1, K + 1) + u
        rho = 0.5 if model_id == 3 else 0.8
        return ModelSpec(str(model_id), K, beta, CSCovariance(rho, p), random_coefficients=True)

    K = 4
    beta = np.zeros((p, K))
    beta[0:8, 1] = 1.2
    beta[0:4, 2] = -1.2
    beta[4:8, 2] = 1.2
    beta[0:8, 3] = np.tile([-1.2, 1.2], 4)
    rho = 0.5 if model_id == 5 else 0.8
    return ModelSpec(str(model_id), K, beta, ARCovariance(rho, p))


def load_model_spec(path: str) -> ModelSpec:
    """Custom model from JSON.

    Format: {"name": "...", "K": 3, "p": 50, "beta": [[row, class, value], ...],
    "cov": {"type": "ar" | "cs" | "block_cs", "rho": 0.5, "block_size": 10}}.
    Rows are 0-based, classes 1..K; unlisted β entries are zero.
    """
    if not os.path.isfile(path):
        raise DataError(f"missing file: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        K, p = int(doc["K"]), int(doc["p"])
        beta = np.zeros((p, K))
        for row, cls, value in doc["beta"]:
            if not (0 <= int(row) < p and 1 <= int(cls) <= K):
                raise DataError(f"beta entry ({row}, {cls}) out of range")
            beta[int(row), int(cls) - 1] = float(value)
        cov_doc = doc["cov"]
        kind, rho = cov_doc["type"], float(cov_doc["rho"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed model spec {path}: {e}")

    if kind == "ar":
        cov: CovarianceStructure = ARCovariance(rho, p)
    elif kind == "cs":
        cov = CSCovariance(rho, p)
    elif kind == "block_cs":
        block = int(cov_doc.get("block_size", p))
        if block < 1 or p % block:
            raise DataError(f"block_size {block} does not divide p={p}")
        cov = BlockCSCovariance(rho, block, p // block)
    else:
        raise DataError(f"unknown covariance type {kind!r}")
    return ModelSpec(str(doc.get("name", os.path.basename(path))), K, beta, cov)


def _class_sizes(n: Union[int, Sequence[int]], K: int) -> List[int]:
    if isinstance(n, (int, np.integer)):
        sizes = [int(n)] * K
    else:
        sizes = [int(c) for c in n]
    if len(sizes) != K or min(sizes) < 1:
        raise DataError(f"need {K} class sizes >= 1")
    return sizes


def split_evenly(total: int, K: int) -> List[int]:
    return [total // K + (1 if k < total % K else 0) for k in range(K)]


def sample_dataset(spec: ModelSpec, n_per_class: Union[int, Sequence[int]], seed: RandomLike = None) -> LabeledDataset:
    """Rows grouped by class: n_k draws from N(μ_k, Σ) for k = 1..K."""
    rng = _rng(seed)
    sizes = _class_sizes(n_per_class, spec.K)
    blocks = [spec.mu[:, k] + spec.cov.sample(rng, m) for k, m in enumerate(sizes)]
    labels = np.repeat(np.arange(1, spec.K + 1), sizes)
    return LabeledDataset(np.vstack(blocks), labels, spec.K)


def bayes_classifier(spec: ModelSpec) -> FittedClassifier:
    """Bayes rule of the model with uniform priors, in the projected form."""
    theta = spec.theta
    prec, rank = projected_precision(theta.T @ spec.cov.apply(theta))
    return FittedClassifier(
        projection=theta,
        proj_means=spec.mu.T @ theta,
        proj_prec=prec,
        log_priors=np.full(spec.K, -np.log(spec.K)),
        projected_rank=rank,
        degenerate=rank == 0,
    )


def _count_errors(spec: ModelSpec, sizes: Sequence[int], rng: np.random.Generator) -> int:
    classifier = bayes_classifier(spec)
    wrong = 0
    for k, size in enumerate(sizes):
        left = size
        while left > 0:
            batch = min(left, _CHUNK)
            X = spec.mu[:, k] + spec.cov.sample(rng, batch)
            wrong += int(np.sum(predict(classifier, X) != k + 1))
            left -= batch
    return wrong


def bayes_error(spec: ModelSpec, m: int = BAYES_TEST_SIZE, seed: RandomLike = None,
                coefficient_draws: int = BAYES_COEFFICIENT_DRAWS) -> float:
    """Monte Carlo Bayes error on m balanced test points, drawn in batches.

    A model with random coefficients is scored over `coefficient_draws`
    fresh draws sharing the m points, the way replicates redraw them.
    """
    if m < 1 or coefficient_draws < 1:
        raise DataError("m and coefficient_draws must be >= 1")
    rng = _rng(seed)
    if not spec.random_coefficients:
        return _count_errors(spec, split_evenly(m, spec.K), rng) / m
    wrong = 0
    for share in split_evenly(m, coefficient_draws):
        wrong += _count_errors(spec.redrawn(rng), split_evenly(share, spec.K), rng)
    return wrong / m


@dataclass
class ReplicateResult:
    test_error: float
    bayes_error: float
    metrics: SelectionMetrics
    chosen_lambda: float
    seed: int
    n_active: int = 0
    converged: bool = True
    wall_time: float = 0.0

    @property
    def C(self) -> int:
        return self.metrics.C

    @property
    def IC(self) -> int:
        return self.metrics.IC


@dataclass
class StudyOptions:
    tuning: str = "validation"
    n_per_class: int = TRAIN_PER_CLASS
    test_size: int = TEST_SIZE
    n_lambda: int = 100
    lambda_min_ratio: float = 0.05
    folds: int = 5
    fixed_u: bool = False
    settings: FitSettings = field(default_factory=FitSettings)

    def validate(self) -> None:
        if self.tuning not in ("validation", "cv"):
            raise DataError(f"unknown tuning mode {self.tuning!r}")
        if self.n_per_class < 1 or self.test_size < 1:
            raise DataError("sample sizes must be >= 1")


def run_replicate(spec: ModelSpec, seed: int, tuning: str = "validation",
                  options: Optional[StudyOptions] = None) -> ReplicateResult:
    """One replicate: train, tune, test, and score against the Bayes rule.

    The replicate seed spawns four streams: random coefficients, training,
    validation and test draws.
    """
    options = replace(options or StudyOptions(), tuning=tuning)
    options.validate()
    started = time.perf_counter()

    u_rng, train_rng, val_rng, test_rng = [np.random.default_rng(s)
                                           for s in np.random.SeedSequence(seed).spawn(4)]
    if not options.fixed_u:
        spec = spec.redrawn(u_rng)

    train = sample_dataset(spec, options.n_per_class, train_rng)
    path, _ = fit_path(train, options.settings, n_lambda=options.n_lambda,
                       lambda_min_ratio=options.lambda_min_ratio)

    if tuning == "validation":
        val = sample_dataset(spec, options.n_per_class, val_rng)
        index, _ = validation_select(train, val.features, val.labels, path,
                                     options.settings.uniform_priors)
    else:
        cv = cross_validate(train, n_folds=options.folds, seed=seed, settings=options.settings,
                            lambdas=path.lambdas, jobs=1)
        index = cv.best_index

    test = sample_dataset(spec, split_evenly(options.test_size, spec.K), test_rng)
    coef = path.solutions[index]
    classifier = fit_projected_lda(train, coef, options.settings.uniform_priors, warn=False)

    result = ReplicateResult(
        test_error=error_rate(classifier, test.features, test.labels),
        bayes_error=error_rate(bayes_classifier(spec), test.features, test.labels),
        metrics=selection_metrics(coef.active_blocks, spec.true_support),
        chosen_lambda=float(path.lambdas[index]),
        seed=int(seed),
        n_active=len(coef.active_blocks),
        converged=path.diagnostics[index].converged,
        wall_time=time.perf_counter() - started,
    )
    logger.debug(f"replicate seed={seed}: error={result.test_error:.4f} bayes={result.bayes_error:.4f} "
                 f"C={result.C} IC={result.IC}")
    return result


STUDY_METRICS = ("test_error", "bayes_error", "C", "IC")


@dataclass
class StudySummary:
    model_id: str
    n_replicates: int
    medians: Dict[str, float]
    std_errors: Dict[str, float]
    replicates: List[ReplicateResult]
    tuning: str = "validation"
    K: int = 0
    p: int = 0
    wall_time: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        """One row per metric. Wall time is left out so runs compare byte for byte."""
        return pd.DataFrame({
            "model": [self.model_id] * len(STUDY_METRICS),
            "metric": list(STUDY_METRICS),
            "median": [self.medians[m] for m in STUDY_METRICS],
            "se": [self.std_errors[m] for m in STUDY_METRICS],
            "n_replicates": [self.n_replicates] * len(STUDY_METRICS),
        })

    def replicates_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "seed": [r.seed for r in self.replicates],
            "test_error": [r.test_error for r in self.replicates],
            "bayes_error": [r.bayes_error for r in self.replicates],
            "C": [r.C for r in self.replicates],
            "IC": [r.IC for r in self.replicates],
            "chosen_lambda": [r.chosen_lambda for r in self.replicates],
            "n_active": [r.n_active for r in self.replicates],
        })


def bootstrap_median_se(values: np.ndarray, rng: np.random.Generator,
                        resamples: int = BOOTSTRAP_RESAMPLES) -> float:
    values = np.asarray(values, dtype=float)
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    return float(np.std(np.median(values[idx], axis=1), ddof=1))


def _replicate_job(job) -> ReplicateResult:
    spec, seed, options = job
    return run_replicate(spec, seed, options.tuning, options)


def run_study(spec: ModelSpec, n_replicates: int, base_seed: int = 42, tuning: str = "validation",
              options: Optional[StudyOptions] = None, jobs: Optional[int] = 1) -> StudySummary:
    """Replicates seeded base_seed + i, summarized by medians and bootstrap se."""
    if n_replicates < 1:
        raise DataError("n_replicates must be >= 1")
    options = replace(options or StudyOptions(), tuning=tuning)
    options.validate()

    started = time.perf_counter()
    logger.info(f"Model {spec.model_id}: {n_replicates} replicates, K={spec.K}, p={spec.p}, "
                f"tuning={tuning}")
    job_list = [(spec, base_seed + i, options) for i in range(n_replicates)]
    results: List[ReplicateResult] = parallel_map(_replicate_job, job_list, jobs)

    stalled = sum(not r.converged for r in results)
    if stalled:
        logger.warning(f"{stalled} replicate(s) selected a lambda that did not converge")

    rng = np.random.default_rng(base_seed)
    medians, ses = {}, {}
    for metric in STUDY_METRICS:
        values = np.array([getattr(r, metric) for r in results], dtype=float)
        medians[metric] = float(np.median(values))
        ses[metric] = bootstrap_median_se(values, rng)

    summary = StudySummary(spec.model_id, n_replicates, medians, ses, results, tuning,
                           spec.K, spec.p, time.perf_counter() - started)
    logger.info(f"Model {spec.model_id}: median error {medians['test_error']:.4f}, "
                f"C={medians['C']:g}, IC={medians['IC']:g}")
    return summary


def describe_model(spec: ModelSpec) -> Dict[str, Any]:
    return {
        "model": spec.model_id,
        "K": spec.K,
        "p": spec.p,
        "cov": spec.cov.describe(),
        "support": len(spec.true_support),
    }
