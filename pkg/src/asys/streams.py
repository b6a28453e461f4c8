"""Chunked data streams: synthetic drifting generators, 80/20 splitting and CSV ingestion."""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 2048
DEFAULT_HASH_DIM = 64


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int


@dataclass
class Chunk:
    """One time step of the stream. Rows are kept in arrival order."""

    index: int
    features: np.ndarray
    labels: np.ndarray
    concept: Optional[str] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels differ in length")
        if self.features.shape[0] < 1:
            raise ValueError("a chunk needs at least one sample")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite features")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be binary")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def samples(self) -> List[Sample]:
        return [Sample(x, int(y)) for x, y in zip(self.features, self.labels)]


def split_chunk(chunk: Chunk, train_fraction: float = 0.8) -> Tuple[Chunk, Chunk]:
    """First ``floor(N * train_fraction)`` rows train, the rest test. No shuffling."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(chunk)
    n_train = int(np.floor(n * train_fraction))
    if n_train < 1 or n_train >= n:
        raise ValueError(f"chunk {chunk.index} of size {n} cannot be split at {train_fraction}")
    train = Chunk(chunk.index, chunk.features[:n_train], chunk.labels[:n_train], chunk.concept)
    test = Chunk(chunk.index, chunk.features[n_train:], chunk.labels[n_train:], chunk.concept)
    return train, test


# --- synthetic streams -----------------------------------------------------------


@dataclass(frozen=True)
class ConceptSpec:
    """Gaussian covariates with logistic labels; each drift source has its own knob.

    ``mean``/``scale`` move P(x), ``theta``/``bias`` move P(y|x), and ``noise``
    flips labels independently.
    """

    mean: np.ndarray
    scale: np.ndarray
    theta: np.ndarray
    bias: float = 0.0
    noise: float = 0.0
    name: str = ""

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        d = mean.size
        scale = np.broadcast_to(np.asarray(self.scale, dtype=np.float64), (d,)).copy()
        theta = np.asarray(self.theta, dtype=np.float64).ravel()
        if theta.size != d:
            raise ValueError(f"theta has {theta.size} entries, expected {d}")
        if np.any(scale <= 0):
            raise ValueError("scale must be positive")
        if not 0.0 <= self.noise < 0.5:
            raise ValueError("noise must be in [0, 0.5)")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "theta", theta)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        x = self.mean + rng.standard_normal((n, self.dim)) * self.scale
        p = 1.0 / (1.0 + np.exp(-(x @ self.theta + self.bias)))
        y = (rng.random(n) < p).astype(np.int8)
        if self.noise > 0:
            flip = rng.random(n) < self.noise
            y = np.where(flip, 1 - y, y).astype(np.int8)
        return x, y


@dataclass(frozen=True)
class StreamSpec:
    schedule: Tuple[Tuple[ConceptSpec, int], ...]
    chunk_size: int = DEFAULT_CHUNK_SIZE
    total_chunks: int = 100
    cycle: bool = True
    seed: Optional[int] = 0

    def __post_init__(self):
        object.__setattr__(self, "schedule", tuple((c, int(d)) for c, d in self.schedule))
        if not self.schedule:
            raise ValueError("schedule is empty")
        if any(d < 1 for _, d in self.schedule):
            raise ValueError("durations must be >= 1")
        if len({c.dim for c, _ in self.schedule}) != 1:
            raise ValueError("all concepts must share one feature dimension")
        if self.chunk_size < 2:
            raise ValueError("chunk_size must be >= 2")
        if self.total_chunks < 0:
            raise ValueError("total_chunks must be >= 0")

    @property
    def period(self) -> int:
        return sum(d for _, d in self.schedule)

    @property
    def dim(self) -> int:
        return self.schedule[0][0].dim

    def concept_at(self, t: int) -> Optional[ConceptSpec]:
        """Concept generating chunk ``t``; ``None`` past the end of a non-cycling schedule."""
        if self.cycle:
            t = t % self.period
        for concept, dur in self.schedule:
            if t < dur:
                return concept
            t -= dur
        return None

    def boundaries(self) -> List[int]:
        """Chunk indices where the active concept changes from the previous chunk."""
        out = []
        prev = self.concept_at(0)
        for t in range(1, self.total_chunks):
            cur = self.concept_at(t)
            if cur is None:
                break
            if cur is not prev:
                out.append(t)
            prev = cur
        return out


def generate_synthetic(spec: StreamSpec) -> Iterator[Chunk]:
    rng = np.random.default_rng(spec.seed)
    for t in range(spec.total_chunks):
        concept = spec.concept_at(t)
        if concept is None:
            return
        x, y = concept.sample(spec.chunk_size, rng)
        yield Chunk(t, x, y, concept.name or None)


def recurring_theta_stream(
    dim: int = 8,
    period: int = 40,
    chunk_size: int = 512,
    total_chunks: int = 200,
    signal: float = 4.0,
    shift: float = 0.5,
    noise: float = 0.0,
    seed: Optional[int] = 0,
) -> StreamSpec:
    """Two concepts alternating every ``period // 2`` chunks, differing only in P(y|x).

    Concept B reverses the sign of a ``shift`` fraction of concept A's labelling
    weights, so the covariates look the same under both concepts.
    """
    if period < 2 or period % 2:
        raise ValueError("period must be an even integer >= 2")
    rng = np.random.default_rng(None if seed is None else [seed, 0xC0DE])
    theta_a = rng.normal(size=dim)
    theta_a *= signal / np.linalg.norm(theta_a)
    n_flip = int(round(shift * dim))
    sign = np.ones(dim)
    sign[rng.permutation(dim)[:n_flip]] = -1.0
    theta_b = theta_a * sign
    zeros, ones = np.zeros(dim), np.ones(dim)
    a = ConceptSpec(zeros, ones, theta_a, 0.0, noise, "A")
    b = ConceptSpec(zeros, ones, theta_b, 0.0, noise, "B")
    half = period // 2
    return StreamSpec(((a, half), (b, half)), chunk_size, total_chunks, True, seed)


# --- CSV ingestion ---------------------------------------------------------------


def feature_hash(column: str, value: str, dim: int) -> Tuple[int, float]:
    """Signed hashing bucket for one categorical value: ``(index, +1 or -1)``."""
    digest = hashlib.md5(f"{column}\x1f{value}".encode("utf-8")).digest()
    index = int.from_bytes(digest[:4], "little") % dim
    sign = 1.0 if digest[4] & 1 else -1.0
    return index, sign


def hash_row(columns: Sequence[str], values: Sequence[str], dim: int) -> np.ndarray:
    x = np.zeros(dim)
    for c, v in zip(columns, values):
        i, s = feature_hash(c, v, dim)
        x[i] += s
    return x


@dataclass(frozen=True)
class CsvSchema:
    label_column: str
    feature_columns: Tuple[str, ...]
    hash_dim: int = DEFAULT_HASH_DIM
    chunk_size: int = DEFAULT_CHUNK_SIZE

    def __post_init__(self):
        object.__setattr__(self, "feature_columns", tuple(self.feature_columns))
        if self.hash_dim < 1:
            raise ValueError("hash_dim must be >= 1")
        if self.chunk_size < 2:
            raise ValueError("chunk_size must be >= 2")


def _parse_label(raw: str) -> Optional[int]:
    try:
        v = float(raw)
    except (TypeError, ValueError):
        return None
    if v == 0.0:
        return 0
    if v == 1.0:
        return 1
    return None


@dataclass
class CsvStream:
    """Iterable over the chunks of a CSV file, in file order.

    ``rejected`` counts rows whose label did not parse; it is complete once the
    stream has been consumed.
    """

    path: Path
    schema: CsvSchema
    rejected: int = field(default=0, init=False)

    def __post_init__(self):
        self.path = Path(self.path)
        if not self.path.is_file():
            raise FileNotFoundError(self.path)
        with open(self.path, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), None) or []
        missing = [c for c in (self.schema.label_column, *self.schema.feature_columns) if c not in header]
        if missing:
            raise KeyError(f"{self.path}: missing columns {missing}")

    @property
    def dim(self) -> int:
        return self.schema.hash_dim

    def __iter__(self) -> Iterator[Chunk]:
        sc = self.schema
        self.rejected = 0
        xs, ys = [], []
        t = 0
        with open(self.path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                y = _parse_label(row.get(sc.label_column))
                if y is None:
                    self.rejected += 1
                    continue
                xs.append(hash_row(sc.feature_columns, [row[c] or "" for c in sc.feature_columns], sc.hash_dim))
                ys.append(y)
                if len(ys) == sc.chunk_size:
                    yield Chunk(t, np.vstack(xs), np.array(ys))
                    t += 1
                    xs, ys = [], []
        if len(ys) >= 2:
            yield Chunk(t, np.vstack(xs), np.array(ys))
        if self.rejected:
            log.warning("%s: rejected %d rows with unparseable labels", self.path, self.rejected)


def ingest_csv(path, schema: CsvSchema) -> CsvStream:
    return CsvStream(Path(path), schema)
