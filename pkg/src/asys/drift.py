"""One-sided, fixed-length adaptive-windowing test over a learner's AUC history.

Each learner keeps the last ``L`` AUC values. A new AUC is appended to form an
extended window of ``L + 1`` values, which is split at every cut point in an
exponentially spaced set. For each split the recent-minus-older mean gap is
compared with a Hoeffding-style threshold scaled by the window's range; the
learner is considered drifted when the gap falls below the threshold at any cut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

DEFAULT_WINDOW_LEN = 12
DEFAULT_DELTA = 0.05


@dataclass(frozen=True)
class DetectorConfig:
    L: int = DEFAULT_WINDOW_LEN
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"window length must be an integer >= 2, got {self.L!r}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta!r}")


@dataclass(frozen=True)
class AucWindow:
    config: DetectorConfig = field(default_factory=DetectorConfig)
    values: Tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.values) > self.config.L:
            raise ValueError("window holds more than L values")
        for v in self.values:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"AUC value out of [0, 1]: {v!r}")

    @property
    def full(self) -> bool:
        return len(self.values) == self.config.L

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class DriftVerdict:
    epsilon: float
    drifted: bool
    best_cut: Optional[int] = None
    warm_up: bool = False

    @classmethod
    def warming(cls) -> "DriftVerdict":
        return cls(math.inf, False, None, True)


def cut_points(L: int) -> Tuple[int, ...]:
    """Cut positions ``L + 1 - 2**z`` that stay positive, ascending."""
    if L < 2:
        raise ValueError("L must be >= 2")
    out = []
    z = 0
    while L + 1 - 2**z > 0:
        out.append(L + 1 - 2**z)
        z += 1
    return tuple(sorted(out))


def _check_cut(extended: Sequence[float], L_cut: int) -> np.ndarray:
    w = np.asarray(extended, dtype=np.float64)
    L = w.size - 1
    if L < 1:
        raise ValueError("extended window needs at least two values")
    if not 1 <= L_cut <= L:
        raise ValueError(f"cut {L_cut} outside [1, {L}]")
    return w


def epsilon_partition(extended: Sequence[float], L_cut: int) -> float:
    """Mean of the values after the cut minus mean of the first ``L_cut`` values."""
    w = _check_cut(extended, L_cut)
    # centring on the first value keeps constant windows at exactly zero
    w = w - w[0]
    return float(w[L_cut:].mean() - w[:L_cut].mean())


def epsilon_cut(extended: Sequence[float], L_cut: int, delta: float) -> float:
    """Negative detection threshold for the split at ``L_cut``."""
    w = _check_cut(extended, L_cut)
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must be in (0, 1)")
    n = w.size
    a, b = L_cut, n - L_cut
    n0 = 2.0 * a * b / (a + b)
    delta_prime = delta / n
    spread = float(w.max() - w.min())
    return -spread * math.sqrt(math.log(2.0 / delta_prime) / (2.0 * n0))


def evaluate(window: AucWindow, new_auc: float) -> DriftVerdict:
    if not 0.0 <= new_auc <= 1.0:
        raise ValueError(f"new AUC out of [0, 1]: {new_auc!r}")
    if not window.full:
        return DriftVerdict.warming()
    extended = window.values + (float(new_auc),)
    best, best_cut = math.inf, None
    for c in cut_points(window.config.L):
        stat = epsilon_partition(extended, c) - epsilon_cut(extended, c, window.config.delta)
        if stat < best:
            best, best_cut = stat, c
    return DriftVerdict(best, best < 0.0, best_cut, False)


def commit(window: AucWindow, new_auc: float, slide: bool) -> AucWindow:
    """Return the window after this step; frozen windows (``slide=False``) stay as they are."""
    if not window.full:
        if not slide:
            raise ValueError("a warming-up window must take every new AUC")
        return AucWindow(window.config, window.values + (float(new_auc),))
    if not slide:
        return window
    return AucWindow(window.config, window.values[1:] + (float(new_auc),))
