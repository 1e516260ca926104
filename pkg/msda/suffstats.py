import threading
from abc import ABC, abstractmethod
from collections import OrderedDict
from typing import Optional

import numpy as np
from loguru import logger

from .data_model import LabeledDataset
from .errors import DataError, MemoryBudgetError

# p above which the pooled covariance is served column by column (~128 MiB dense)
DENSE_LIMIT = 4096


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


class CovarianceSource(ABC):
    mode = ""

    @abstractmethod
    def column(self, j: int) -> np.ndarray:
        pass

    @abstractmethod
    def diagonal(self) -> np.ndarray:
        pass

    @abstractmethod
    def matmul(self, m: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def dense(self) -> np.ndarray:
        pass

    @abstractmethod
    def rescaled(self, scale: np.ndarray) -> "CovarianceSource":
        pass


class DenseCovariance(CovarianceSource):
    mode = "dense"

    def __init__(self, matrix: np.ndarray):
        self.matrix = _frozen(matrix)
        self._diag = _frozen(np.diag(self.matrix))

    def column(self, j: int) -> np.ndarray:
        return self.matrix[:, j]

    def diagonal(self) -> np.ndarray:
        return self._diag

    def matmul(self, m: np.ndarray) -> np.ndarray:
        return self.matrix @ m

    def dense(self) -> np.ndarray:
        return self.matrix

    def rescaled(self, scale: np.ndarray) -> "DenseCovariance":
        return DenseCovariance(self.matrix / np.outer(scale, scale))


class OnDemandCovariance(CovarianceSource):
    """Columns of Σ̂ computed from the class-centered data when asked for.

    Recently used columns are kept in an LRU memo guarded by a lock, so one
    instance can be read from several threads.
    """

    mode = "on-demand"

    def __init__(self, centered: np.ndarray, denom: float, memo_size: int = 256):
        self.centered = _frozen(centered)
        self.denom = float(denom)
        self.memo_size = max(1, int(memo_size))
        self._diag = _frozen(np.einsum("ij,ij->j", self.centered, self.centered) / self.denom)
        self._memo: "OrderedDict[int, np.ndarray]" = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        state["_memo"] = OrderedDict()
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def column(self, j: int) -> np.ndarray:
        with self._lock:
            col = self._memo.get(j)
            if col is not None:
                self._memo.move_to_end(j)
                self.hits += 1
                return col

        col = self.centered.T @ self.centered[:, j] / self.denom
        col.setflags(write=False)

        with self._lock:
            self.misses += 1
            self._memo[j] = col
            self._memo.move_to_end(j)
            while len(self._memo) > self.memo_size:
                self._memo.popitem(last=False)
        return col

    def diagonal(self) -> np.ndarray:
        return self._diag

    def matmul(self, m: np.ndarray) -> np.ndarray:
        return self.centered.T @ (self.centered @ m) / self.denom

    def dense(self) -> np.ndarray:
        return self.centered.T @ self.centered / self.denom

    def rescaled(self, scale: np.ndarray) -> "OnDemandCovariance":
        return OnDemandCovariance(self.centered / scale, self.denom, self.memo_size)


class SuffStats:
    """Class means, mean differences, priors and the pooled covariance.

    `delta[:, k-1]` is μ̂_k − μ̂_1 (class 1 is the baseline). `scale` is set
    when the statistics describe standardized features.
    """

    def __init__(self, class_counts: np.ndarray, class_means: np.ndarray,
                 cov: CovarianceSource, priors: Optional[np.ndarray] = None,
                 zero_variance: Optional[np.ndarray] = None,
                 scale: Optional[np.ndarray] = None):
        self.class_counts = np.array(class_counts, dtype=np.int64)
        self.class_counts.setflags(write=False)
        self.class_means = _frozen(class_means)
        self.K, self.p = self.class_means.shape
        self.n = int(self.class_counts.sum())
        if np.any(self.class_counts <= 0):
            raise DataError("every class needs at least one row")

        if priors is None:
            priors = self.class_counts / self.n
        self.priors = _frozen(priors)
        self.delta = _frozen((self.class_means[1:] - self.class_means[0]).T)
        self.cov = cov

        if zero_variance is None:
            zero_variance = self.cov.diagonal() <= 0.0
        self.zero_variance = np.array(zero_variance, dtype=bool)
        self.zero_variance.setflags(write=False)
        self.scale = None if scale is None else _frozen(scale)

    @classmethod
    def from_moments(cls, class_means, cov, class_counts=None, priors=None) -> "SuffStats":
        """Stats from known moments (dense Σ̂); used for oracles and tests."""
        class_means = np.atleast_2d(np.asarray(class_means, dtype=float))
        if class_counts is None:
            class_counts = np.ones(class_means.shape[0], dtype=np.int64)
        return cls(class_counts, class_means, DenseCovariance(np.asarray(cov, dtype=float)), priors)

    @property
    def cov_mode(self) -> str:
        return self.cov.mode

    @property
    def dense_cov(self) -> Optional[np.ndarray]:
        return self.cov.dense() if self.cov_mode == "dense" else None

    @property
    def centered_data(self) -> Optional[np.ndarray]:
        return getattr(self.cov, "centered", None)

    @property
    def cov_diag(self) -> np.ndarray:
        return self.cov.diagonal()

    @property
    def grand_mean(self) -> np.ndarray:
        return self.priors @ self.class_means

    def cov_column(self, j: int) -> np.ndarray:
        if not 0 <= j < self.p:
            raise IndexError(f"feature index {j} out of range 0..{self.p - 1}")
        return self.cov.column(j)

    def cov_matmul(self, m: np.ndarray) -> np.ndarray:
        return self.cov.matmul(m)

    def standardized(self) -> "SuffStats":
        """Stats of the features divided by their pooled within-class sd.

        Zero-variance features keep scale 1. Coefficients fitted on the
        result map back through `theta / scale[:, None]`.
        """
        step = np.where(self.zero_variance, 1.0, np.sqrt(np.maximum(self.cov_diag, 0.0)))
        total = step if self.scale is None else self.scale * step
        return SuffStats(self.class_counts, self.class_means / step, self.cov.rescaled(step),
                         self.priors, self.zero_variance, total)


def variance_floor(X: np.ndarray) -> np.ndarray:
    """Per-feature level below which a within-class variance counts as zero.

    Round-off in the class means leaves ~eps-sized residuals behind.
    """
    return (64 * np.finfo(float).eps * np.max(np.abs(X), axis=0, initial=0.0)) ** 2


def compute_stats(data: LabeledDataset, cov_mode: str = "auto", uniform_priors: bool = False,
                  dense_limit: int = DENSE_LIMIT, expected_active: Optional[int] = None) -> SuffStats:
    """Sufficient statistics of a labeled dataset.

    Args:
        data: the training set
        cov_mode: "dense", "on-demand" or "auto" (dense when p <= dense_limit)
        uniform_priors: use 1/K instead of n_k/n
        dense_limit: largest p allowed a dense Σ̂
        expected_active: sizes the on-demand column memo (2x this)

    Returns:
        SuffStats with Σ̂ = Σ_k Σ_{Y_i=k} (X_i−μ̂_k)(X_i−μ̂_k)ᵀ / (n−K)
    """
    if cov_mode == "auto":
        cov_mode = "dense" if data.p <= dense_limit else "on-demand"
    if cov_mode not in ("dense", "on-demand"):
        raise DataError(f"unknown covariance mode {cov_mode!r}")
    if cov_mode == "dense" and data.p > dense_limit:
        raise MemoryBudgetError(f"dense covariance for p={data.p} exceeds the limit of {dense_limit}")

    X = data.features
    counts = data.class_counts
    means = np.vstack([X[data.labels == k].mean(axis=0) for k in range(1, data.K + 1)])
    centered = X - means[data.labels - 1]
    denom = data.n - data.K

    floor = variance_floor(X)

    if cov_mode == "dense":
        S = centered.T @ centered / denom
        cov: CovarianceSource = DenseCovariance((S + S.T) / 2)
    else:
        if expected_active is None:
            expected_active = min(data.n, data.p)
        cov = OnDemandCovariance(centered, denom, memo_size=2 * expected_active)

    zero_variance = cov.diagonal() <= floor
    if zero_variance.any():
        logger.warning(f"{int(zero_variance.sum())} feature(s) have zero within-class variance; their coefficients stay at zero")

    priors = np.full(data.K, 1.0 / data.K) if uniform_priors else counts / data.n
    return SuffStats(counts, means, cov, priors, zero_variance)


def cov_column(stats: SuffStats, j: int) -> np.ndarray:
    return stats.cov_column(j)
