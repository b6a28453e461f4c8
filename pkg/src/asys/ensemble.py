"""Drift-aware ensemble controller.

Each training step scores every learner on the incoming training split before
the update, runs its drift detector, decides which learners may train, and
backpropagates the renormalised aggregate of the learners left unfrozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import drift
from .drift import AucWindow, DetectorConfig, DriftVerdict
from .metrics import auc
from .model import (
    AdamState,
    ModelConfig,
    Params,
    Strategy,
    adam_step,
    backward,
    chunk_weights,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .streams import Chunk

__all__ = [
    "Strategy",
    "StepTrace",
    "Ensemble",
    "aggregate_infer",
    "normalize_masked_weights",
    "compute_weights",
    "resolve_indicators",
]


def aggregate_infer(pctr, w) -> np.ndarray:
    pctr = np.asarray(pctr, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if pctr.ndim != 2 or pctr.shape[1] != w.size:
        raise ValueError("pctr must be N x m with m matching the weights")
    if np.any(w < 0):
        raise ValueError("aggregation weights must be non-negative")
    if abs(w.sum() - 1.0) > 1e-6:
        raise ValueError("aggregation weights must sum to 1")
    return pctr @ w


def normalize_masked_weights(w, indicators) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    mask = np.asarray(indicators, dtype=bool)
    if w.shape != mask.shape:
        raise ValueError("weights and indicators differ in length")
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")
    if not mask.any():
        raise ValueError("at least one indicator must be set")
    masked = np.where(mask, w, 0.0)
    return masked / masked.sum()


def compute_weights(strategy, gate=None, m: Optional[int] = None) -> np.ndarray:
    """Chunk-level aggregation weights: uniform for IncCTR, mean gate row otherwise."""
    strategy = Strategy.parse(strategy)
    if gate is not None:
        gate = np.asarray(gate, dtype=np.float64)
        m = gate.shape[1]
    if m is None:
        raise ValueError("need the learner count or gate outputs")
    return chunk_weights(strategy, gate, m)


def resolve_indicators(verdicts: Sequence[DriftVerdict]) -> np.ndarray:
    """Which learners may train this step.

    Learners that did not drift train. If every learner drifted, only the one
    with the largest statistic trains (lowest index on ties).
    """
    if not verdicts:
        raise ValueError("no verdicts")
    ok = np.array([not v.drifted for v in verdicts])
    if ok.any():
        return ok
    eps = np.array([v.epsilon for v in verdicts])
    out = np.zeros(len(verdicts), dtype=bool)
    out[int(np.argmax(eps))] = True
    return out


@dataclass
class StepTrace:
    chunk_index: int
    auc: List[Optional[float]]
    epsilon: List[Optional[float]]
    indicators: List[bool]
    weights: List[float]
    train_loss: float
    n_train: int
    test_pctr: Optional[List[float]] = None
    test_labels: Optional[List[int]] = None
    concept: Optional[str] = None

    def as_dict(self) -> dict:
        def fin(v):
            # json has no infinities; warm-up statistics are stored as null
            return None if v is None or not math.isfinite(v) else v

        return {
            "chunk_index": self.chunk_index,
            "concept": self.concept,
            "auc": self.auc,
            "epsilon": [fin(e) for e in self.epsilon],
            "indicators": self.indicators,
            "weights": self.weights,
            "train_loss": self.train_loss,
            "n_train": self.n_train,
            "test_pctr": self.test_pctr,
            "test_labels": self.test_labels,
        }


@dataclass
class Ensemble:
    """Backbone, ``m`` learners, gate, optimizer and one AUC window per learner.

    With ``asys=False`` every learner trains at every step and the detectors
    are never consulted, which is the plain incremental baseline.
    """

    config: ModelConfig
    strategy: Strategy = Strategy.INCCTR
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    asys: bool = True
    params: Params = field(default=None)
    adam: AdamState = field(default_factory=AdamState)
    windows: List[AucWindow] = field(default=None)
    batch_size: int = 0
    seed: Optional[int] = 0

    def __post_init__(self):
        self.strategy = Strategy.parse(self.strategy)
        if self.params is None:
            self.params = init_params(self.config, np.random.default_rng(self.seed))
        if self.windows is None:
            self.windows = [AucWindow(self.detector) for _ in range(self.config.m)]
        if len(self.windows) != self.config.m:
            raise ValueError("need one window per learner")

    @property
    def m(self) -> int:
        return self.config.m

    def predict_learners(self, x):
        cache = forward(self.params, self.config, x)
        return cache.pctr, compute_weights(self.strategy, cache.gate, self.m)

    def infer_step(self, chunk: Chunk) -> np.ndarray:
        if len(chunk) == 0:
            raise ValueError("empty chunk")
        pctr, w = self.predict_learners(chunk.features)
        return aggregate_infer(pctr, w)

    def detect(self, aucs: Sequence[Optional[float]]):
        """Verdicts and indicators for this step's per-learner AUCs (ASYS mode)."""
        verdicts = []
        for window, a in zip(self.windows, aucs):
            if a is None:
                # single-class split: no evidence either way
                verdicts.append(DriftVerdict(math.inf, False, None, not window.full))
            else:
                verdicts.append(drift.evaluate(window, a))
        return verdicts, resolve_indicators(verdicts)

    def train_step(self, chunk: Chunk) -> StepTrace:
        if len(chunk) == 0:
            raise ValueError("empty chunk")
        x, y = chunk.features, chunk.labels
        cache = forward(self.params, self.config, x)
        aucs = [auc(cache.pctr[:, k], y) for k in range(self.m)]

        if self.asys:
            verdicts, mask = self.detect(aucs)
            for k, a in enumerate(aucs):
                if a is not None and mask[k]:
                    self.windows[k] = drift.commit(self.windows[k], a, slide=True)
            epsilons = [v.epsilon for v in verdicts]
        else:
            mask = np.ones(self.m, dtype=bool)
            epsilons = [None] * self.m

        w = compute_weights(self.strategy, cache.gate, self.m)
        loss = self._update(cache, x, y, mask)

        return StepTrace(
            chunk_index=chunk.index,
            auc=aucs,
            epsilon=epsilons,
            indicators=[bool(b) for b in mask],
            weights=[float(v) for v in w],
            train_loss=loss,
            n_train=len(chunk),
            concept=chunk.concept,
        )

    def _update(self, cache, x, y, mask) -> float:
        n = len(y)
        if self.batch_size <= 0 or self.batch_size >= n:
            loss, grads, keys = backward(self.params, self.config, cache, y, mask, self.strategy)
            adam_step(self.params, grads, self.adam, keys)
            return loss
        # one pass over the split in stream order; the step's mask applies to every batch
        first_loss = None
        for start in range(0, n, self.batch_size):
            sl = slice(start, start + self.batch_size)
            c = forward(self.params, self.config, x[sl])
            loss, grads, keys = backward(self.params, self.config, c, y[sl], mask, self.strategy)
            adam_step(self.params, grads, self.adam, keys)
            if first_loss is None:
                first_loss = loss
        return first_loss

    def save(self, path) -> None:
        meta = {
            "strategy": self.strategy.value,
            "model": {
                "d_in": self.config.d_in,
                "m": self.config.m,
                "d_emb": self.config.d_emb,
                "hidden": list(self.config.hidden),
            },
            "detector": {"L": self.detector.L, "delta": self.detector.delta},
            "windows": [list(w.values) for w in self.windows],
            "asys": self.asys,
            "batch_size": self.batch_size,
        }
        save_checkpoint(path, self.params, self.adam, meta)

    @classmethod
    def load(cls, path) -> "Ensemble":
        params, adam, meta = load_checkpoint(path)
        det = DetectorConfig(int(meta["detector"]["L"]), float(meta["detector"]["delta"]))
        mc = meta["model"]
        return cls(
            config=ModelConfig(int(mc["d_in"]), int(mc["m"]), int(mc["d_emb"]), tuple(mc["hidden"])),
            strategy=Strategy.parse(meta["strategy"]),
            detector=det,
            asys=bool(meta["asys"]),
            params=params,
            adam=adam or AdamState(),
            windows=[AucWindow(det, tuple(v)) for v in meta["windows"]],
            batch_size=int(meta.get("batch_size", 0)),
        )
