"""Prequential experiment runner: stream -> ensemble -> metrics, plus report I/O and comparison."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .drift import DetectorConfig
from .ensemble import Ensemble, StepTrace
from .metrics import MetricSeries, auc, check_estimation_error_bound, logloss, random_bound_configuration, windowed_metric
from .model import AdamState, ModelConfig, Strategy
from .streams import (
    Chunk,
    ConceptSpec,
    CsvSchema,
    StreamSpec,
    generate_synthetic,
    ingest_csv,
    recurring_theta_stream,
    split_chunk,
)

log = logging.getLogger(__name__)

REPORT_FORMAT = "asys-report-1"

# every recognised key with its default; ``None`` means "required when relevant" or "derived"
DEFAULTS: Dict[str, object] = {
    "seed": 0,
    "stream.source": "synthetic",
    "stream.preset": "recurring_theta",
    "stream.dim": 8,
    "stream.period": 40,
    "stream.chunk_size": 512,
    "stream.total_chunks": 200,
    "stream.signal": 4.0,
    "stream.shift": 0.5,
    "stream.noise": 0.0,
    "stream.seed": None,
    "stream.schedule": None,
    "stream.cycle": True,
    "data.path": None,
    "data.label_col": "click",
    "data.feature_cols": None,
    "data.hash_dim": 64,
    "data.chunk_size": 2048,
    "model.d_emb": 32,
    "model.hidden": (32, 16),
    "model.lr": 3e-3,
    "model.beta1": 0.9,
    "model.beta2": 0.999,
    "model.eps": 1e-8,
    "model.batch_size": 128,
    "ensemble.m": 3,
    "ensemble.strategy": "IncCTR",
    "asys.enabled": True,
    "drift.window_len": 12,
    "drift.delta": 0.05,
    "eval.train_fraction": 0.8,
    "eval.chunks_per_window": 5,
    "output.dir": None,
    "output.checkpoint": False,
    "bound.n_configs": 100,
    "bound.n_mc": 100_000,
    "bound.dim": 8,
}

_CONCEPT_FIELDS = ("mean", "scale", "theta", "bias", "noise")


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    pass


def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _parse_list(v, cast=float) -> Tuple:
    if isinstance(v, (list, tuple)):
        return tuple(cast(x) for x in v)
    return tuple(cast(x) for x in str(v).split(",") if x.strip())


def parse_config_text(text: str) -> Dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


@dataclass
class ExperimentConfig:
    values: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        unknown = [k for k in self.values if k not in DEFAULTS and not self._is_concept_key(k)]
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(DEFAULTS)
        merged.update(self.values)
        self.values = merged
        self._validate()

    @staticmethod
    def _is_concept_key(k: str) -> bool:
        parts = k.split(".")
        return len(parts) == 3 and parts[0] == "concept" and parts[2] in _CONCEPT_FIELDS

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        cfg = cls(parse_config_text(path.read_text(encoding="utf-8")))
        data_path = cfg.values.get("data.path")
        if data_path and not Path(data_path).is_absolute():
            cfg.values["data.path"] = str(path.parent / data_path)
        return cfg

    def replace(self, **overrides) -> "ExperimentConfig":
        """Copy with keys overridden; use ``__`` for dots, e.g. ``drift__delta=0.1``."""
        vals = dict(self.values)
        for k, v in overrides.items():
            vals[k.replace("__", ".")] = v
        return ExperimentConfig(vals)

    def __getitem__(self, key):
        return self.values[key]

    # typed accessors
    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    @property
    def m(self) -> int:
        return int(self.values["ensemble.m"])

    @property
    def strategy(self) -> Strategy:
        return Strategy.parse(self.values["ensemble.strategy"])

    @property
    def asys_enabled(self) -> bool:
        return _parse_bool(self.values["asys.enabled"])

    @property
    def detector(self) -> DetectorConfig:
        return DetectorConfig(int(self.values["drift.window_len"]), float(self.values["drift.delta"]))

    @property
    def train_fraction(self) -> float:
        return float(self.values["eval.train_fraction"])

    @property
    def chunks_per_window(self) -> int:
        return int(self.values["eval.chunks_per_window"])

    @property
    def output_dir(self) -> Optional[Path]:
        d = self.values.get("output.dir")
        return Path(d) if d else None

    def _validate(self):
        try:
            if self.m < 1:
                raise ConfigError("ensemble.m must be >= 1")
            self.strategy
            self.detector
            self.asys_enabled
            if not 0.0 < self.train_fraction < 1.0:
                raise ConfigError("eval.train_fraction must be in (0, 1)")
            if self.chunks_per_window < 1:
                raise ConfigError("eval.chunks_per_window must be >= 1")
            if self.values["stream.source"] not in ("synthetic", "csv"):
                raise ConfigError("stream.source must be synthetic or csv")
            if self.values["stream.source"] == "csv":
                if not self.values["data.path"] or not self.values["data.feature_cols"]:
                    raise ConfigError("csv streams need data.path and data.feature_cols")
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def echo(self) -> Dict[str, object]:
        """JSON-safe view of the configuration, without the output location."""
        out = {}
        for k in sorted(self.values):
            if k.startswith("output."):
                continue
            v = self.values[k]
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    # builders
    def model_config(self, d_in: int) -> ModelConfig:
        return ModelConfig(
            d_in=d_in,
            m=self.m,
            d_emb=int(self.values["model.d_emb"]),
            hidden=_parse_list(self.values["model.hidden"], int),
        )

    def adam_state(self) -> AdamState:
        v = self.values
        return AdamState(float(v["model.lr"]), float(v["model.beta1"]), float(v["model.beta2"]), float(v["model.eps"]))

    def stream_seed(self) -> int:
        s = self.values.get("stream.seed")
        return self.seed if s is None else int(s)

    def stream_spec(self) -> StreamSpec:
        v = self.values
        dim = int(v["stream.dim"])
        if v["stream.schedule"]:
            concepts = {}
            schedule = []
            for item in str(v["stream.schedule"]).split(","):
                name, _, dur = item.strip().partition(":")
                if name not in concepts:
                    concepts[name] = self._concept(name, dim)
                schedule.append((concepts[name], int(dur)))
            return StreamSpec(
                tuple(schedule),
                int(v["stream.chunk_size"]),
                int(v["stream.total_chunks"]),
                _parse_bool(v["stream.cycle"]),
                self.stream_seed(),
            )
        if v["stream.preset"] != "recurring_theta":
            raise ConfigError(f"unknown stream.preset {v['stream.preset']!r}")
        return recurring_theta_stream(
            dim=dim,
            period=int(v["stream.period"]),
            chunk_size=int(v["stream.chunk_size"]),
            total_chunks=int(v["stream.total_chunks"]),
            signal=float(v["stream.signal"]),
            shift=float(v["stream.shift"]),
            noise=float(v["stream.noise"]),
            seed=self.stream_seed(),
        )

    def _concept(self, name: str, dim: int) -> ConceptSpec:
        def vec(fieldname, default):
            raw = self.values.get(f"concept.{name}.{fieldname}", default)
            arr = np.asarray(_parse_list(raw), dtype=np.float64)
            if arr.size == 1:
                arr = np.full(dim, arr[0])
            if arr.size != dim:
                raise ConfigError(f"concept.{name}.{fieldname} needs 1 or {dim} values")
            return arr

        if f"concept.{name}.theta" not in self.values:
            raise ConfigError(f"concept.{name}.theta is required")
        return ConceptSpec(
            vec("mean", "0"),
            vec("scale", "1"),
            vec("theta", None),
            float(self.values.get(f"concept.{name}.bias", 0.0)),
            float(self.values.get(f"concept.{name}.noise", 0.0)),
            name,
        )

    def open_stream(self):
        """``(chunks, d_in, drift_boundaries)`` for the configured source."""
        v = self.values
        if v["stream.source"] == "csv":
            schema = CsvSchema(
                str(v["data.label_col"]),
                _parse_list(v["data.feature_cols"], lambda s: s.strip()),
                int(v["data.hash_dim"]),
                int(v["data.chunk_size"]),
            )
            stream = ingest_csv(v["data.path"], schema)
            return stream, stream.dim, []
        spec = self.stream_spec()
        return generate_synthetic(spec), spec.dim, spec.boundaries()


@dataclass
class RunReport:
    overall_auc: Optional[float]
    windowed: MetricSeries
    traces: List[StepTrace]
    wall_clock_seconds: float
    config: Dict[str, object]
    chunks_per_window: int
    drift_boundaries: List[int] = field(default_factory=list)
    overall_logloss: Optional[float] = None
    label: str = ""

    def summary(self) -> dict:
        frozen = [sum(not b for b in t.indicators) for t in self.traces]
        return {
            "format": REPORT_FORMAT,
            "label": self.label,
            "overall_auc": self.overall_auc,
            "overall_logloss": self.overall_logloss,
            "n_chunks": len(self.traces),
            "chunks_per_window": self.chunks_per_window,
            "windowed_auc": self.windowed.as_dict(),
            "drift_boundaries": self.drift_boundaries,
            "mean_post_drift_dip": post_drift_dip(self.windowed, self.drift_boundaries, self.chunks_per_window),
            "frozen_learner_steps": int(sum(frozen)),
            "steps_with_freeze": int(sum(f > 0 for f in frozen)),
            "config": self.config,
            "wall_clock_seconds": self.wall_clock_seconds,
        }

    def test_records(self):
        for t in self.traces:
            if t.test_pctr:
                yield t.chunk_index, t.test_pctr, t.test_labels


def _stream_label(cfg: ExperimentConfig) -> str:
    return f"{cfg.strategy.value}{'+ASYS' if cfg.asys_enabled else ''}"


def build_ensemble(cfg: ExperimentConfig, d_in: int) -> Ensemble:
    return Ensemble(
        config=cfg.model_config(d_in),
        strategy=cfg.strategy,
        detector=cfg.detector,
        asys=cfg.asys_enabled,
        adam=cfg.adam_state(),
        batch_size=int(cfg.values["model.batch_size"]),
        seed=np.random.SeedSequence([cfg.seed, 1]).generate_state(1)[0],
    )


def run_prequential(
    ensemble: Ensemble, chunks: Iterable[Chunk], train_fraction: float, score_test: bool = True
) -> List[StepTrace]:
    """Per chunk: split, train on the first part, then score the held-out remainder."""
    traces = []
    for chunk in chunks:
        try:
            train, test = split_chunk(chunk, train_fraction)
            trace = ensemble.train_step(train)
            if score_test:
                trace.test_pctr = [float(p) for p in ensemble.infer_step(test)]
                trace.test_labels = [int(y) for y in test.labels]
        except Exception as e:
            raise ExperimentError(f"chunk {chunk.index}: {e}") from e
        traces.append(trace)
    return traces


def run_experiment(cfg: ExperimentConfig, persist: bool = True) -> RunReport:
    t0 = time.perf_counter()
    chunks, d_in, boundaries = cfg.open_stream()
    ensemble = build_ensemble(cfg, d_in)
    traces = run_prequential(ensemble, chunks, cfg.train_fraction)

    scores = [p for t in traces for p in (t.test_pctr or [])]
    labels = [y for t in traces for y in (t.test_labels or [])]
    overall = auc(scores, labels) if scores else None
    ll = logloss(scores, labels) if scores else None
    windowed = windowed_metric(
        ((t.chunk_index, t.test_pctr, t.test_labels) for t in traces if t.test_pctr), cfg.chunks_per_window
    )
    report = RunReport(
        overall_auc=overall,
        windowed=windowed,
        traces=traces,
        wall_clock_seconds=time.perf_counter() - t0,
        config=cfg.echo(),
        chunks_per_window=cfg.chunks_per_window,
        drift_boundaries=boundaries,
        overall_logloss=ll,
        label=_stream_label(cfg),
    )
    out = cfg.output_dir
    if persist and out is not None:
        write_report(report, out)
        if _parse_bool(cfg.values["output.checkpoint"]):
            ensemble.save(out / "model.ckpt")
    return report


# --- persistence -----------------------------------------------------------------


def _write_tsv(path: Path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in rows:
            fh.write(f"{a}\t{'nan' if b is None else repr(float(b))}\n")


def write_report(report: RunReport, out) -> Path:
    """Write ``report.json``, ``trace.ndjson`` and two-column ``.tsv`` plot series into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(out / "trace.ndjson", "w", encoding="utf-8") as fh:
        for t in report.traces:
            fh.write(json.dumps(t.as_dict(), sort_keys=True) + "\n")
    w = report.windowed
    _write_tsv(out / "windowed_auc.tsv", zip(w.window_index, w.value))
    _write_tsv(out / "train_loss.tsv", ((t.chunk_index, t.train_loss) for t in report.traces))
    _write_tsv(out / "frozen_learners.tsv", ((t.chunk_index, sum(not b for b in t.indicators)) for t in report.traces))
    m = len(report.traces[0].indicators) if report.traces else 0
    for k in range(m):
        _write_tsv(out / f"weight_{k}.tsv", ((t.chunk_index, t.weights[k]) for t in report.traces))
        _write_tsv(out / f"learner_auc_{k}.tsv", ((t.chunk_index, t.auc[k]) for t in report.traces))
        _write_tsv(out / f"indicator_{k}.tsv", ((t.chunk_index, int(t.indicators[k])) for t in report.traces))
    return out / "report.json"


def _trace_from_dict(d) -> StepTrace:
    return StepTrace(
        chunk_index=d["chunk_index"],
        auc=d["auc"],
        epsilon=[math.inf if e is None else e for e in d["epsilon"]] if d["epsilon"] else d["epsilon"],
        indicators=d["indicators"],
        weights=d["weights"],
        train_loss=d["train_loss"],
        n_train=d["n_train"],
        test_pctr=d.get("test_pctr"),
        test_labels=d.get("test_labels"),
        concept=d.get("concept"),
    )


def load_report(path) -> RunReport:
    """Read a report from its directory or its ``report.json``; traces load when present."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    d = json.loads(path.read_text(encoding="utf-8"))
    if d.get("format") != REPORT_FORMAT:
        raise ValueError(f"{path}: not an {REPORT_FORMAT} report")
    trace_path = path.parent / "trace.ndjson"
    traces = []
    if trace_path.exists():
        with open(trace_path, encoding="utf-8") as fh:
            traces = [_trace_from_dict(json.loads(line)) for line in fh if line.strip()]
    return RunReport(
        overall_auc=d["overall_auc"],
        windowed=MetricSeries.from_dict(d["windowed_auc"]),
        traces=traces,
        wall_clock_seconds=d["wall_clock_seconds"],
        config=d["config"],
        chunks_per_window=d["chunks_per_window"],
        drift_boundaries=d["drift_boundaries"],
        overall_logloss=d.get("overall_logloss"),
        label=d.get("label", ""),
    )


# --- comparison --------------------------------------------------------------------


def post_drift_dip(series: MetricSeries, boundaries: Sequence[int], chunks_per_window: int) -> Optional[float]:
    """Mean over drift boundaries of (windowed AUC just before) - (lowest windowed AUC after).

    "After" spans the windows from the boundary up to the next boundary. Larger
    values mean a deeper drop. ``None`` when no boundary has both sides defined.
    """
    values = dict(zip(series.window_index, series.value))
    dips = []
    edges = list(boundaries)
    for i, b in enumerate(edges):
        pre_w = (b - 1) // chunks_per_window
        start = b // chunks_per_window
        stop = (edges[i + 1] - 1) // chunks_per_window if i + 1 < len(edges) else max(values, default=start)
        if start == pre_w:
            # boundary inside a window: pre-boundary value is the previous full window
            pre_w -= 1
        post = [values[w] for w in range(start, stop + 1) if w in values]
        if pre_w in values and post:
            dips.append(values[pre_w] - min(post))
    return float(np.mean(dips)) if dips else None


@dataclass
class Comparison:
    labels: List[str]
    overall_auc: List[Optional[float]]
    mean_dip: List[Optional[float]]
    # window index -> per-run AUC minus the first run's AUC
    window_deltas: Dict[int, List[float]]

    def as_dict(self) -> dict:
        return {
            "runs": [
                {"label": l, "overall_auc": a, "mean_post_drift_dip": d, "overall_auc_delta": _delta(a, self.overall_auc[0])}
                for l, a, d in zip(self.labels, self.overall_auc, self.mean_dip)
            ],
            "window_deltas": {str(k): v for k, v in sorted(self.window_deltas.items())},
        }

    def to_text(self) -> str:
        lines = ["run\toverall_auc\tdelta_vs_first\tmean_post_drift_dip"]
        for l, a, d in zip(self.labels, self.overall_auc, self.mean_dip):
            lines.append(f"{l}\t{_fmt(a)}\t{_fmt(_delta(a, self.overall_auc[0]))}\t{_fmt(d)}")
        return "\n".join(lines)


def _delta(a, ref):
    return None if a is None or ref is None else a - ref


def _fmt(v):
    return "nan" if v is None else f"{v:.6f}"


def compare_runs(reports: Sequence[RunReport], labels: Optional[Sequence[str]] = None) -> Comparison:
    if len(reports) < 2:
        raise ValueError("need at least two reports")
    cpw = {r.chunks_per_window for r in reports}
    if len(cpw) != 1:
        raise ValueError(f"reports use different chunks_per_window: {sorted(cpw)}")
    labels = list(labels) if labels is not None else [r.label or f"run{i}" for i, r in enumerate(reports)]
    ref = dict(zip(reports[0].windowed.window_index, reports[0].windowed.value))
    common = set(ref)
    for r in reports[1:]:
        common &= set(r.windowed.window_index)
    deltas = {}
    for w in sorted(common):
        deltas[w] = [dict(zip(r.windowed.window_index, r.windowed.value))[w] - ref[w] for r in reports]
    k = cpw.pop()
    return Comparison(
        labels,
        [r.overall_auc for r in reports],
        [post_drift_dip(r.windowed, r.drift_boundaries, k) for r in reports],
        deltas,
    )


def write_comparison(cmp: Comparison, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.json").write_text(json.dumps(cmp.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "comparison.tsv").write_text(cmp.to_text() + "\n", encoding="utf-8")
    for i, label in enumerate(cmp.labels[1:], 1):
        safe = "".join(c if c.isalnum() or c in "-_+" else "_" for c in label)
        _write_tsv(out / f"window_delta_{i}_{safe}.tsv", ((w, d[i]) for w, d in sorted(cmp.window_deltas.items())))
    return out / "comparison.json"


# --- bound diagnostic ----------------------------------------------------------------


def run_bound_check(cfg: ExperimentConfig) -> dict:
    n_configs = int(cfg.values["bound.n_configs"])
    n_mc = int(cfg.values["bound.n_mc"])
    dim = int(cfg.values["bound.dim"])
    ss = np.random.SeedSequence([cfg.seed, 7])
    rng = np.random.default_rng(ss)
    results = []
    for i in range(n_configs):
        f, P, Pp, y = random_bound_configuration(rng, dim)
        rep = check_estimation_error_bound(f, P, Pp, y, n_mc, seed=[cfg.seed, 7, i])
        results.append(rep.as_dict())
    n_hold = sum(r["holds"] for r in results)
    return {"n_configs": n_configs, "n_mc": n_mc, "dim": dim, "n_holds": n_hold, "results": results}
