import json
from pathlib import Path

import numpy as np
import pytest

from asys.ensemble import Ensemble
from asys.metrics import auc
from asys.model import ModelConfig
from asys.streams import (
    Chunk,
    ConceptSpec,
    CsvSchema,
    StreamSpec,
    feature_hash,
    generate_synthetic,
    ingest_csv,
    recurring_theta_stream,
    split_chunk,
)

DATA = Path(__file__).parent / "data"


def concept(theta, name="", mean=0.0, noise=0.0, bias=0.0):
    theta = np.asarray(theta, dtype=float)
    return ConceptSpec(np.full(theta.size, mean), np.ones(theta.size), theta, bias, noise, name)


class TestSplit:
    @pytest.mark.parametrize("n,n_train", [(2048, 1638), (10, 8), (2, 1)])
    def test_sizes(self, n, n_train):
        c = Chunk(0, np.zeros((n, 2)), np.zeros(n))
        tr, te = split_chunk(c, 0.8)
        assert len(tr) == n_train and len(te) == n - n_train

    def test_partition_preserves_order(self):
        rng = np.random.default_rng(0)
        c = Chunk(3, rng.normal(size=(17, 4)), rng.integers(0, 2, 17))
        tr, te = split_chunk(c, 0.7)
        np.testing.assert_array_equal(np.vstack([tr.features, te.features]), c.features)
        np.testing.assert_array_equal(np.concatenate([tr.labels, te.labels]), c.labels)
        assert tr.index == te.index == 3

    def test_empty_part_rejected(self):
        with pytest.raises(ValueError):
            split_chunk(Chunk(0, np.zeros((1, 2)), [0]), 0.8)
        with pytest.raises(ValueError):
            split_chunk(Chunk(0, np.zeros((3, 2)), np.zeros(3)), 0.2)

    def test_fraction_bounds(self):
        with pytest.raises(ValueError):
            split_chunk(Chunk(0, np.zeros((10, 2)), np.zeros(10)), 1.0)


class TestChunk:
    def test_validation(self):
        with pytest.raises(ValueError):
            Chunk(0, np.zeros((2, 2)), [0, 2])
        with pytest.raises(ValueError):
            Chunk(0, np.array([[np.nan]]), [0])
        with pytest.raises(ValueError):
            Chunk(0, np.zeros((0, 2)), [])

    def test_samples_view(self):
        c = Chunk(0, [[1.0, 2.0], [3.0, 4.0]], [0, 1])
        s = c.samples
        assert len(s) == 2 and s[1].label == 1
        np.testing.assert_array_equal(s[1].features, [3.0, 4.0])


class TestSynthetic:
    def test_stationary_click_rate(self):
        theta = np.array([1.0, -0.5, 0.25])
        c = concept(theta, bias=-0.5)
        spec = StreamSpec(((c, 1),), chunk_size=4000, total_chunks=5, seed=1)
        y = np.concatenate([ch.labels for ch in generate_synthetic(spec)])
        # Monte-Carlo oracle for E[sigmoid(theta.x + b)], x ~ N(0, I)
        x = np.random.default_rng(99).standard_normal((2_000_000, 3))
        p = 1.0 / (1.0 + np.exp(-(x @ theta - 0.5)))
        mean = p.mean()
        sd = np.sqrt(mean * (1 - mean) / y.size)
        assert abs(y.mean() - mean) < 3 * sd

    def test_cycled_schedule(self):
        a, b = concept([1.0], "A"), concept([-1.0], "B")
        spec = StreamSpec(((a, 20), (b, 20)), chunk_size=4, total_chunks=100, seed=0)
        names = [c.concept for c in generate_synthetic(spec)]
        assert names[:20] == ["A"] * 20
        assert names[20:40] == ["B"] * 20
        assert names[40:60] == ["A"] * 20
        assert spec.boundaries() == [20, 40, 60, 80]

    def test_non_cycling_stops(self):
        a = concept([1.0], "A")
        spec = StreamSpec(((a, 3),), chunk_size=4, total_chunks=10, cycle=False, seed=0)
        assert len(list(generate_synthetic(spec))) == 3

    def test_determinism(self):
        spec = recurring_theta_stream(dim=4, chunk_size=16, total_chunks=12, seed=5)
        a = list(generate_synthetic(spec))
        b = list(generate_synthetic(spec))
        for x, y in zip(a, b):
            assert x.features.tobytes() == y.features.tobytes()
            assert x.labels.tobytes() == y.labels.tobytes()

    def test_label_noise(self):
        c = concept([0.0, 0.0], noise=0.3, bias=-20.0)
        spec = StreamSpec(((c, 1),), chunk_size=5000, total_chunks=2, seed=0)
        y = np.concatenate([ch.labels for ch in generate_synthetic(spec)])
        assert abs(y.mean() - 0.3) < 3 * np.sqrt(0.21 / y.size)

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            concept([1.0], noise=0.5)
        with pytest.raises(ValueError):
            ConceptSpec(np.zeros(2), np.array([1.0, 0.0]), np.ones(2))
        with pytest.raises(ValueError):
            StreamSpec(((concept([1.0]), 0),))
        with pytest.raises(ValueError):
            StreamSpec(((concept([1.0]), 1),), chunk_size=1)
        with pytest.raises(ValueError):
            StreamSpec(((concept([1.0]), 1), (concept([1.0, 2.0]), 1)))

    def test_recurring_chunks_are_identically_distributed(self):
        spec = recurring_theta_stream(dim=8, period=40, chunk_size=512, total_chunks=81, seed=2)
        chunks = list(generate_synthetic(spec))
        # frozen probe: a randomly initialised network, never trained
        probe = Ensemble(ModelConfig(d_in=8, m=1), seed=123)
        for t in (0, 25, 40):
            a, b = chunks[t], chunks[t + spec.period]
            s = np.concatenate([probe.infer_step(a), probe.infer_step(b)])
            which = np.concatenate([np.zeros(len(a)), np.ones(len(b))])
            assert abs(auc(s, which) - 0.5) <= 0.05
        # the two concepts share P(x) but differ in P(y|x)
        a_chunk, b_chunk = chunks[0], chunks[20]
        assert a_chunk.concept == "A" and b_chunk.concept == "B"


class TestCsv:
    def schema(self, **kw):
        base = dict(label_column="click", feature_columns=("site", "app", "device"), hash_dim=8, chunk_size=3)
        base.update(kw)
        return CsvSchema(**base)

    def test_golden_fixture(self):
        golden = json.loads((DATA / "hash_fixture_golden.json").read_text())
        stream = ingest_csv(DATA / "hash_fixture.csv", self.schema())
        chunks = list(stream)
        assert len(chunks) == len(golden["chunks"]) == 2
        for c, g in zip(chunks, golden["chunks"]):
            np.testing.assert_array_equal(c.features, np.array(g["features"], dtype=float))
            np.testing.assert_array_equal(c.labels, g["labels"])
        assert stream.rejected == golden["rejected"] == 1
        assert [c.index for c in chunks] == [0, 1]

    def test_header_only(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("click,site,app,device\n")
        assert list(ingest_csv(p, self.schema())) == []

    def test_identical_rows_identical_vectors(self, tmp_path):
        p = tmp_path / "dup.csv"
        p.write_text("click,site,app,device\n1,s,a,d\n0,s,a,d\n")
        (c,) = list(ingest_csv(p, self.schema(chunk_size=2)))
        np.testing.assert_array_equal(c.features[0], c.features[1])

    def test_missing_column(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("click,site\n1,a\n")
        with pytest.raises(KeyError):
            ingest_csv(p, self.schema())

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ingest_csv(tmp_path / "nope.csv", self.schema())

    def test_trailing_singleton_dropped(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("click,site,app,device\n" + "1,a,b,c\n" * 4)
        chunks = list(ingest_csv(p, self.schema()))
        assert [len(c) for c in chunks] == [3]

    def test_trailing_pair_kept(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("click,site,app,device\n" + "1,a,b,c\n" * 5)
        assert [len(c) for c in ingest_csv(p, self.schema())] == [3, 2]

    def test_hash_is_pure(self):
        assert feature_hash("site", "a1", 64) == feature_hash("site", "a1", 64)
        idx, sign = feature_hash("site", "a1", 64)
        assert 0 <= idx < 64 and sign in (-1.0, 1.0)
        # column name participates
        assert len({feature_hash(c, "v", 1 << 20) for c in ("site", "app", "device")}) == 3
