"""Rank-based AUC, log-loss, windowed AUC series and the transfer-bound checker."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

LOGLOSS_CLIP = 1e-7


def _as_batch(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size == 0:
        raise ValueError("empty batch")
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.size} != {y.size}")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(np.int8)


def auc(scores, labels) -> Optional[float]:
    """Mann-Whitney AUC with ties counted as one half.

    Returns ``None`` when the batch holds a single class.
    """
    s, y = _as_batch(scores, labels)
    if np.any(s < 0.0) or np.any(s > 1.0):
        raise ValueError("scores must lie in [0, 1]")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s, method="average")
    # rank sum of positives minus its minimum possible value counts correct pairs (+0.5 per tie)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def logloss(scores, labels) -> float:
    s, y = _as_batch(scores, labels)
    s = np.clip(s, LOGLOSS_CLIP, 1.0 - LOGLOSS_CLIP)
    return float(-np.mean(y * np.log(s) + (1 - y) * np.log1p(-s)))


@dataclass(frozen=True)
class MetricSeries:
    window_index: Tuple[int, ...]
    value: Tuple[float, ...]
    count: Tuple[int, ...]

    def __len__(self):
        return len(self.window_index)

    def as_dict(self):
        return {
            "window_index": list(self.window_index),
            "value": list(self.value),
            "count": list(self.count),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["window_index"]), tuple(d["value"]), tuple(d["count"]))


def windowed_metric(
    records: Iterable[Tuple[int, Sequence[float], Sequence[int]]], chunks_per_window: int
) -> MetricSeries:
    """Pool test samples of consecutive groups of chunks and compute AUC per group.

    ``records`` yields ``(chunk_index, scores, labels)``. Windows whose pooled
    labels hold one class are left out of the series.
    """
    if chunks_per_window < 1:
        raise ValueError("chunks_per_window must be >= 1")
    pooled = {}
    for chunk_index, scores, labels in records:
        w = int(chunk_index) // chunks_per_window
        bucket = pooled.setdefault(w, ([], []))
        bucket[0].append(np.asarray(scores, dtype=np.float64).ravel())
        bucket[1].append(np.asarray(labels).ravel())
    idx, vals, counts = [], [], []
    for w in sorted(pooled):
        s = np.concatenate(pooled[w][0])
        y = np.concatenate(pooled[w][1])
        if s.size == 0:
            continue
        a = auc(s, y)
        if a is None:
            continue
        idx.append(w)
        vals.append(a)
        counts.append(int(s.size))
    return MetricSeries(tuple(idx), tuple(vals), tuple(counts))


# --- transfer bound diagnostic -------------------------------------------------


@dataclass(frozen=True)
class LipschitzModelSpec:
    """f(x) = sigmoid(weights . x + bias)."""

    weights: np.ndarray
    bias: float = 0.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        z = np.asarray(x, dtype=np.float64) @ np.asarray(self.weights, dtype=np.float64) + self.bias
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    @property
    def lipschitz(self) -> float:
        # w.r.t. the l1 distance on inputs; sigmoid slope is at most 1/4
        w = np.asarray(self.weights, dtype=np.float64)
        return float(np.max(np.abs(w), initial=0.0) / 4.0)


@dataclass(frozen=True)
class DistributionSpec:
    """Gaussian N(mean, diag(scale**2)) for the inputs of one class; scale 0 is a point mass."""

    mean: np.ndarray
    scale: np.ndarray | float = 1.0

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        mean = np.asarray(self.mean, dtype=np.float64)
        scale = np.broadcast_to(np.asarray(self.scale, dtype=np.float64), mean.shape)
        if np.any(scale < 0):
            raise ValueError("scale must be non-negative")
        return mean + rng.standard_normal((n, mean.size)) * scale


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    holds: bool
    lipschitz_term: float
    source_error: float
    stderr: float

    def as_dict(self):
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "holds": self.holds,
            "lipschitz_term": self.lipschitz_term,
            "source_error": self.source_error,
            "stderr": self.stderr,
        }


def check_estimation_error_bound(
    f: LipschitzModelSpec,
    P: DistributionSpec,
    P_prime: DistributionSpec,
    y: int,
    n_mc: int,
    seed=None,
) -> BoundReport:
    """Monte-Carlo check of E_P|f(x)-y| <= L * E||x_i - x_j||_1 + E_P'|f(x)-y|.

    x_i is drawn from P and x_j from P_prime, independently, ``n_mc`` times.
    The inequality is declared to hold when lhs <= rhs + 3 combined standard errors.
    """
    if n_mc <= 0:
        raise ValueError("n_mc must be positive")
    if y not in (0, 1):
        raise ValueError("y must be 0 or 1")
    rng = np.random.default_rng(seed)
    xi = P.sample(n_mc, rng)
    xj = P_prime.sample(n_mc, rng)
    if xi.shape[1] != np.asarray(f.weights).size or xj.shape[1] != xi.shape[1]:
        raise ValueError("dimension mismatch between model and distributions")

    err_target = np.abs(f(xi) - y)
    err_source = np.abs(f(xj) - y)
    dist = f.lipschitz * np.abs(xi - xj).sum(axis=1)

    lhs = float(err_target.mean())
    lip = float(dist.mean())
    src = float(err_source.mean())
    rhs = lip + src
    if n_mc > 1:
        se_l = err_target.std(ddof=1) / np.sqrt(n_mc)
        se_r = (dist + err_source).std(ddof=1) / np.sqrt(n_mc)
        se = float(np.hypot(se_l, se_r))
    else:
        se = 0.0
    # tolerance for float summation when both sides agree exactly (e.g. point masses)
    holds = lhs <= rhs + 3.0 * se + 1e-12
    return BoundReport(lhs, rhs, bool(holds), lip, src, se)


def random_bound_configuration(rng: np.random.Generator, dim: int = 8):
    """A random (f, P, P', y) with Gaussian class-conditionals and a linear-sigmoid model."""
    f = LipschitzModelSpec(rng.normal(size=dim), float(rng.normal()))
    P = DistributionSpec(rng.normal(size=dim), rng.uniform(0.5, 1.5, size=dim))
    P_prime = DistributionSpec(rng.normal(size=dim) * 2.0, rng.uniform(0.5, 1.5, size=dim))
    y = int(rng.integers(0, 2))
    return f, P, P_prime, y
