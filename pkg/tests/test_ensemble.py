import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asys.drift import AucWindow, DetectorConfig, DriftVerdict
from asys.ensemble import (
    Ensemble,
    aggregate_infer,
    compute_weights,
    normalize_masked_weights,
    resolve_indicators,
)
from asys.model import AdamState, ModelConfig, Strategy, learner_keys, softmax, zero_params
from asys.metrics import auc
from asys.streams import Chunk, generate_synthetic, recurring_theta_stream


def verdicts(eps):
    return [DriftVerdict(e, e < 0) for e in eps]


def make_chunk(rng, n=64, d=4, index=0):
    x = rng.normal(size=(n, d))
    y = (rng.random(n) < 1 / (1 + np.exp(-x[:, 0] * 2))).astype(int)
    return Chunk(index, x, y)


class TestAggregation:
    def test_single_learner(self):
        p = np.array([[0.2], [0.9]])
        np.testing.assert_array_equal(aggregate_infer(p, [1.0]), [0.2, 0.9])

    def test_midpoint(self):
        assert aggregate_infer([[0.2, 0.8]], [0.5, 0.5])[0] == pytest.approx(0.5)

    @given(st.floats(0.01, 0.99), st.lists(st.floats(0.01, 1), min_size=1, max_size=6))
    def test_fixed_point(self, p, raw):
        w = np.array(raw) / sum(raw)
        out = aggregate_infer(np.full((3, len(raw)), p), w)
        np.testing.assert_allclose(out, p, rtol=1e-12)

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            aggregate_infer([[0.1, 0.2]], [1.5, -0.5])


class TestNormalize:
    def test_masked(self):
        out = normalize_masked_weights([0.5, 0.3, 0.2], [1, 0, 1])
        np.testing.assert_allclose(out, [5 / 7, 0, 2 / 7])
        assert out[1] == 0.0

    def test_identity(self):
        w = np.array([0.5, 0.3, 0.2])
        np.testing.assert_allclose(normalize_masked_weights(w, [1, 1, 1]), w)

    def test_uniform(self):
        out = normalize_masked_weights(np.full(5, 0.2), [1, 0, 1, 1, 0])
        np.testing.assert_allclose(out, [1 / 3, 0, 1 / 3, 1 / 3, 0])

    def test_all_false(self):
        with pytest.raises(ValueError):
            normalize_masked_weights([0.5, 0.5], [0, 0])

    @settings(max_examples=300)
    @given(st.lists(st.tuples(st.floats(1e-6, 1.0), st.booleans()), min_size=1, max_size=12))
    def test_sums_to_one(self, items):
        w = np.array([a for a, _ in items])
        mask = np.array([b for _, b in items])
        if not mask.any():
            mask[0] = True
        out = normalize_masked_weights(w, mask)
        assert abs(out.sum() - 1.0) <= 1e-9
        assert np.all(out[~mask] == 0.0)


class TestComputeWeights:
    def test_incctr(self):
        np.testing.assert_allclose(compute_weights("IncCTR", m=4), [0.25] * 4)

    def test_moe_row_mean(self):
        np.testing.assert_allclose(compute_weights("MoE", np.array([[0.6, 0.4], [0.2, 0.8]])), [0.4, 0.6])

    def test_zero_gate_is_uniform(self):
        g = softmax(np.zeros((5, 3)))
        np.testing.assert_allclose(compute_weights(Strategy.ADAMOE, g), [1 / 3] * 3)

    def test_gate_required(self):
        with pytest.raises(ValueError):
            compute_weights("MoE", None, m=3)


class TestResolve:
    def test_case_one(self):
        assert resolve_indicators(verdicts([0.02, -0.01, 0.03])).tolist() == [True, False, True]

    def test_case_two(self):
        assert resolve_indicators(verdicts([-0.05, -0.01, -0.03])).tolist() == [False, True, False]

    def test_tie_at_zero_trains(self):
        assert resolve_indicators(verdicts([0.0, -0.01])).tolist() == [True, False]

    def test_case_two_tie_lowest_index(self):
        assert resolve_indicators(verdicts([-0.02, -0.02])).tolist() == [True, False]

    def test_warm_up_counts_as_fine(self):
        v = [DriftVerdict.warming(), DriftVerdict(-0.1, True)]
        assert resolve_indicators(v).tolist() == [True, False]

    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=10))
    def test_always_a_survivor(self, eps):
        assert resolve_indicators(verdicts(eps)).any()


class TestTrainStep:
    def _ens(self, m=3, strategy="IncCTR", **kw):
        return Ensemble(ModelConfig(d_in=4, m=m, d_emb=6, hidden=(5, 3)), strategy, adam=AdamState(lr=0.01), **kw)

    def test_warm_up_matches_baseline(self):
        rng = np.random.default_rng(0)
        chunks = [make_chunk(rng, index=t) for t in range(5)]
        a, b = self._ens(seed=1), self._ens(seed=1, asys=False)
        for c in chunks:
            ta, tb = a.train_step(c), b.train_step(c)
            assert ta.indicators == tb.indicators == [True] * 3
            assert ta.train_loss == tb.train_loss
        assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
        assert [len(w) for w in a.windows] == [5] * 3
        assert all(len(w) == 0 for w in b.windows)

    def test_single_learner_never_frozen(self):
        spec = recurring_theta_stream(dim=4, period=10, chunk_size=64, total_chunks=40, shift=1.0, seed=0)
        ens = Ensemble(ModelConfig(d_in=4, m=1), detector=DetectorConfig(4, 0.4), adam=AdamState(lr=0.02), seed=0)
        saw_drift = False
        for c in generate_synthetic(spec):
            t = ens.train_step(c)
            assert t.indicators == [True]
            saw_drift |= t.epsilon[0] is not None and t.epsilon[0] < 0
        assert saw_drift

    def test_frozen_learner_bitwise_unchanged(self):
        rng = np.random.default_rng(3)
        ens = self._ens(strategy="MoE", seed=2)
        c = make_chunk(rng, n=200)
        now = [auc(ens.predict_learners(c.features)[0][:, k], c.labels) for k in range(3)]
        # a sustained drop from a flat history: the newest stored value already equals today's AUC
        hist = [(min(1.0, a + 0.2),) * 11 + (a,) for a in now]
        ens.windows = [AucWindow(ens.detector, h) for h in hist]
        ens.windows[1] = AucWindow(ens.detector, (0.0,) * 12)
        before = {k: v.copy() for k, v in ens.params.items()}
        mask = ens.train_step(c).indicators
        assert mask == [False, True, False]
        for k in range(3):
            keys = learner_keys(k, ens.config)
            if mask[k]:
                assert any(before[key].tobytes() != ens.params[key].tobytes() for key in keys)
                assert len(ens.windows[k]) == 12 and ens.windows[k].values[-1] == now[k]
            else:
                assert all(before[key].tobytes() == ens.params[key].tobytes() for key in keys)
                assert all(key not in ens.adam.m for key in keys)
                assert ens.windows[k].values == hist[k]

    def test_undefined_auc_trains_without_window_change(self):
        ens = self._ens(seed=0)
        c = Chunk(0, np.random.default_rng(0).normal(size=(10, 4)), np.ones(10))
        t = ens.train_step(c)
        assert t.auc == [None] * 3 and t.indicators == [True] * 3
        assert all(len(w) == 0 for w in ens.windows)

    def test_zero_params_output_half(self):
        for s in Strategy:
            ens = self._ens(strategy=s)
            ens.params = zero_params(ens.config)
            c = make_chunk(np.random.default_rng(1))
            np.testing.assert_allclose(ens.infer_step(c), 0.5)

    def test_infer_is_pure_and_composed(self):
        ens = self._ens(strategy="AdaMoE", seed=4)
        c = make_chunk(np.random.default_rng(2))
        pctr, w = ens.predict_learners(c.features)
        a = ens.infer_step(c)
        b = ens.infer_step(c)
        assert a.tobytes() == b.tobytes()
        np.testing.assert_array_equal(a, aggregate_infer(pctr, w))

    def test_incctr_uniform_inference(self):
        ens = self._ens(m=2)
        # fix learner outputs by zeroing weights and setting head biases
        ens.params = zero_params(ens.config)
        ens.params["learner0.b2"][:] = np.log(0.3 / 0.7)
        ens.params["learner1.b2"][:] = np.log(0.7 / 0.3)
        np.testing.assert_allclose(ens.infer_step(make_chunk(np.random.default_rng(0))), 0.5)

    def test_empty_chunk_rejected(self):
        ens = self._ens()

        class Empty:
            def __len__(self):
                return 0

        with pytest.raises(ValueError):
            ens.train_step(Empty())
        with pytest.raises(ValueError):
            ens.infer_step(Empty())

    def test_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        ens = self._ens(strategy="MoE", seed=3)
        for t in range(3):
            ens.train_step(make_chunk(rng, index=t))
        ens.save(tmp_path / "e.ckpt")
        back = Ensemble.load(tmp_path / "e.ckpt")
        c = make_chunk(rng, index=9)
        assert back.infer_step(c).tobytes() == ens.infer_step(c).tobytes()
        assert [w.values for w in back.windows] == [w.values for w in ens.windows]
        # both continue identically
        assert back.train_step(c).train_loss == ens.train_step(c).train_loss


@pytest.mark.slow
class TestRecurringScenario:
    # measured 5-seed means on the default stream: IncCTR 0.76, MoE 0.72, AdaMoE 0.62
    @pytest.mark.parametrize("strategy", ["IncCTR", "MoE", "AdaMoE"])
    def test_freezes_after_first_recurrence(self, strategy):
        from asys.harness import ExperimentConfig, run_experiment

        rates = []
        for seed in range(5):
            rep = run_experiment(ExperimentConfig({"ensemble.strategy": strategy, "seed": seed}), persist=False)
            # every chunk is foreign to the learners kept from the other concept
            steps = [not all(t.indicators) for t in rep.traces if t.chunk_index >= rep.drift_boundaries[1]]
            rates.append(np.mean(steps))
        assert np.mean(rates) >= 0.5
