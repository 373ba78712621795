import csv
import math

import numpy as np
import pytest

from ecctlin import autodiff as ad
from ecctlin.channel import ChannelConfig, hard_decision
from ecctlin.codes import hamming74, syndrome
from ecctlin.training import (
    TrainConfig,
    TrainState,
    TrainingError,
    adam_step,
    clip_global_norm,
    cosine_lr,
    sample_training_batch,
    train,
    train_step,
)
from ecctlin.transformer import DecoderModel, ModelConfig, threshold

CODE = hamming74()


def small_model(seed=0, attention="standard"):
    cfg = ModelConfig(7, 3, dim=8, heads=2, blocks=1, attention=attention, seed=seed)
    return DecoderModel(cfg, CODE.pcm)


def snapshot(model):
    return {k: p.data.copy() for k, p in model.params.items()}


class TestSchedule:
    def test_endpoints(self):
        assert cosine_lr(0, 1000, 5e-3) == pytest.approx(5e-3, rel=1e-12)
        assert cosine_lr(500, 1000, 5e-3) == pytest.approx(0.5 * (5e-3 + 5e-5), rel=1e-12)
        assert cosine_lr(1000, 1000, 5e-3) == pytest.approx(5e-5, rel=1e-12)

    def test_clamped_past_end(self):
        assert cosine_lr(5000, 1000, 1.0) == cosine_lr(1000, 1000, 1.0)

    def test_non_increasing(self):
        vals = [cosine_lr(t, 300, 1e-2) for t in range(301)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_negative_step(self):
        with pytest.raises(ValueError):
            cosine_lr(-1, 10, 1.0)


class TestConfig:
    def test_inverted_range(self):
        with pytest.raises(ValueError):
            TrainConfig(ebno_low=9, ebno_high=8)

    def test_negative_lr(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=-1e-3)

    def test_presets(self):
        assert (TrainConfig.preset("default").ebno_low, TrainConfig.preset("default").ebno_high) == (8.0, 15.0)
        assert TrainConfig.preset("wide", seed=3).seed == 3


class TestOptimizer:
    def test_first_adam_step_is_signed_lr(self):
        # with bias correction the first update is lr * g / (|g| + eps)
        with ad.precision(np.float64):
            p = {"w": ad.parameter(np.array([1.0, -2.0, 3.0]))}
            g = {"w": np.array([0.5, -4.0, 1e-3])}
            state = TrainState.fresh(p, 0)
            adam_step(p, g, state, 0.1, TrainConfig())
            expected = np.array([1.0, -2.0, 3.0]) - 0.1 * g["w"] / (np.abs(g["w"]) + 1e-8)
            np.testing.assert_allclose(p["w"].data, expected, rtol=1e-12)
            assert state.step == 1

    def test_second_step_closed_form(self):
        with ad.precision(np.float64):
            p = {"w": ad.parameter(np.array([0.0]))}
            state = TrainState.fresh(p, 0)
            cfg = TrainConfig()
            adam_step(p, {"w": np.array([1.0])}, state, 1.0, cfg)
            adam_step(p, {"w": np.array([3.0])}, state, 1.0, cfg)
            m = (0.9 * 0.1 * 1.0 + 0.1 * 3.0) / (1 - 0.9**2)
            v = (0.999 * 0.001 * 1.0 + 0.001 * 9.0) / (1 - 0.999**2)
            step2 = m / (math.sqrt(v) + 1e-8)
            step1 = 1.0 / (1.0 + 1e-8)
            np.testing.assert_allclose(p["w"].data, [-step1 - step2], rtol=1e-12)

    def test_clip_global_norm(self):
        grads = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
        norm = clip_global_norm(grads, 1.0)
        assert norm == pytest.approx(5.0)
        total = math.sqrt(sum(float(np.sum(g**2)) for g in grads.values()))
        assert total == pytest.approx(1.0, rel=1e-9)
        small = {"a": np.array([0.3, 0.4])}
        clip_global_norm(small, 1.0)
        assert small["a"].tolist() == [0.3, 0.4]

    def test_zero_lr_leaves_parameters(self):
        model = small_model()
        before = snapshot(model)
        train(model, CODE, TrainConfig(iterations=5, batch_size=16, lr=0.0))
        after = snapshot(model)
        assert all(np.array_equal(before[k], after[k]) for k in before)


class TestBatches:
    def test_seeded(self):
        ch = ChannelConfig(coderate=4 / 7)
        a = sample_training_batch(CODE, ch, (8, 15), 32, np.random.default_rng(3))
        b = sample_training_batch(CODE, ch, (8, 15), 32, np.random.default_rng(3))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_targets_are_codewords_and_syndrome_appended(self):
        x, cw = sample_training_batch(CODE, ChannelConfig(coderate=4 / 7), (2, 4), 200, np.random.default_rng(4))
        assert x.shape == (200, 10) and cw.shape == (200, 7)
        assert not syndrome(CODE.pcm, cw).any()
        np.testing.assert_array_equal(x[:, 7:], syndrome(CODE.pcm, hard_decision(x[:, :7])))

    def test_high_snr_hard_decisions(self):
        x, cw = sample_training_batch(CODE, ChannelConfig(coderate=4 / 7), (30, 30), 2000, np.random.default_rng(5))
        assert np.mean(hard_decision(x[:, :7]) == cw) >= 0.999


class TestLearning:
    def test_loss_decreases_on_most_seeds(self):
        cfg = TrainConfig(iterations=50, batch_size=64, ebno_low=2, ebno_high=6)
        improved = 0
        for seed in range(20):
            model = small_model(seed)
            losses = []
            train(model, CODE, TrainConfig(**{**cfg.to_dict(), "seed": seed}),
                  callback=lambda s: losses.append(s.loss))
            improved += np.mean(losses[-10:]) < np.mean(losses[:10])
        assert improved >= 19

    def test_noiseless_fit(self):
        model = small_model(1)
        train(model, CODE, TrainConfig(iterations=200, batch_size=64, ebno_low=30, ebno_high=30, seed=1))
        x, cw = sample_training_batch(CODE, ChannelConfig(coderate=4 / 7), (30, 30), 500, np.random.default_rng(9))
        with ad.no_grad():
            assert np.array_equal(threshold(model(x.astype(ad.get_dtype())).data), cw)

    def test_non_finite_loss_raises(self):
        model = small_model()
        model.params["head.b"].data[...] = np.nan
        state = TrainState.fresh(model.params, 0)
        x, cw = sample_training_batch(CODE, ChannelConfig(coderate=4 / 7), (8, 15), 4, state.rng)
        with pytest.raises(TrainingError):
            train_step(model, x.astype(ad.get_dtype()), cw, state, TrainConfig())


class TestResume:
    def test_split_run_matches_uninterrupted(self):
        cfg = TrainConfig(iterations=40, batch_size=16, seed=2)
        whole = small_model(2, "linear")
        train(whole, CODE, cfg)

        split = small_model(2, "linear")
        state = train(split, CODE, cfg, until=20)
        assert state.step == 20
        train(split, CODE, cfg, state)
        a, b = snapshot(whole), snapshot(split)
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_log_csv(self, tmp_path):
        path = tmp_path / "log.csv"
        cfg = TrainConfig(iterations=6, batch_size=8)
        model = small_model()
        state = train(model, CODE, cfg, until=3, log_path=path)
        train(model, CODE, cfg, state, log_path=path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["step", "lr", "loss", "train_ber"]
        assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4, 5, 6]
        assert float(rows[1][1]) == pytest.approx(cosine_lr(0, 6, cfg.lr), rel=1e-8)
