from types import SimpleNamespace

import numpy as np
import pytest

from fhnhrv.classifier_net import build_param_vector, init_weights, predict
from fhnhrv.errors import OptimizerError, TrainingError
from fhnhrv.fhn_layer import DriveConfig, FHNParams
from fhnhrv.optimizers import (
    AdamState,
    EpochRecord,
    TrainConfig,
    adam_step,
    train,
    write_train_log,
)
from fhnhrv.rr_data import RRSegment, synth_dataset

FAST_DRIVE = DriveConfig(dt_ms=50.0, amplitude=0.6, pulse_width_ms=50.0)


def short_segments(n=8, label_split=True):
    segs = []
    for i in range(n):
        label = i % 2 if label_split else 0
        base = 640.0 if label else 820.0
        ivals = tuple(base + 7.0 * ((i * 13 + j * 5) % 11) for j in range(5))
        segs.append(RRSegment(f"P{i}", label, f"S{i}", ivals))
    return segs


def tiny_pv(x0):
    """A bare parameter container for pure Adam math tests."""
    x0 = np.asarray(x0, dtype=float)
    return SimpleNamespace(values=x0.copy(), clamp_mask=np.zeros(len(x0), dtype=bool))


class TestAdamStep:
    def test_zero_gradient_leaves_params(self):
        pv = tiny_pv([1.0, -2.0])
        state = AdamState.init(2, lr=0.1)
        adam_step(state, pv, np.zeros(2))
        assert np.array_equal(pv.values, [1.0, -2.0])
        assert state.t == 1

    def test_hand_traced_first_step(self):
        # f(x) = x^2 at x0=1, lr=0.1: m_hat=2, v_hat=4, step = 0.1*2/2 = 0.1
        pv = tiny_pv([1.0])
        state = AdamState.init(1, lr=0.1)
        adam_step(state, pv, np.array([2.0]))
        assert pv.values[0] == pytest.approx(0.9, abs=1e-8)

    def test_clamped_coordinate_never_moves(self):
        pv = tiny_pv([1.0, 1.0])
        pv.clamp_mask[0] = True
        state = AdamState.init(2, lr=0.1)
        for _ in range(50):
            adam_step(state, pv, np.array([5.0, 5.0]))
        assert pv.values[0] == 1.0
        assert pv.values[1] != 1.0

    def test_nonfinite_gradient_rejected(self):
        pv = tiny_pv([1.0])
        state = AdamState.init(1)
        with pytest.raises(OptimizerError):
            adam_step(state, pv, np.array([np.nan]))

    def test_quadratic_converges(self):
        # f(x) = ||x||^2 from (1,1): ||x|| < 1e-3 within 2000 steps at lr=0.05
        pv = tiny_pv([1.0, 1.0])
        state = AdamState.init(2, lr=0.05)
        for _ in range(2000):
            adam_step(state, pv, 2.0 * pv.values)
        assert np.linalg.norm(pv.values) < 1e-3

    def test_real_param_vector(self):
        pv = build_param_vector([], 1.0, init_weights([1, 2], sigma=0.0))
        state = AdamState.init(len(pv), lr=0.1)
        grad = np.zeros(len(pv))
        grad[pv.index_map["amplitude"]] = 2.0
        adam_step(state, pv, grad)
        assert pv.amplitude_value() == pytest.approx(0.9, abs=1e-8)


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(OptimizerError):
            TrainConfig(clamp_fraction=1.5)
        with pytest.raises(OptimizerError):
            TrainConfig(epochs_max=0)


class TestTrainProtocol:
    def run_small(self, epochs=10, clamp=0.1, lam=0.01, seed=3, segs=None):
        cfg = TrainConfig(
            epochs_max=epochs, clamp_fraction=clamp, minibatch_size=4,
            lam=lam, lr=0.01, convergence_patience=epochs + 1, seed=seed,
        )
        pop = [FHNParams(2.0, 0.1, 0.3, 0.6)]
        return train(segs or short_segments(), cfg, pop,
                     layer_sizes=[1, 4, 2], drive=FAST_DRIVE)

    def test_clamp_schedule_epochs(self):
        model, log = self.run_small(epochs=10, clamp=0.1)
        assert [r.clamped for r in log] == [True] + [False] * 9
        assert [r.epoch for r in log] == list(range(1, 11))

    def test_oscillator_frozen_then_released(self):
        init_pop = [FHNParams(2.0, 0.1, 0.3, 0.6)]
        cfg = TrainConfig(epochs_max=10, clamp_fraction=0.5, minibatch_size=4,
                          lam=0.0, lr=0.005, convergence_patience=99, seed=1)
        model, log = train(short_segments(), cfg, init_pop,
                           layer_sizes=[1, 4, 2], drive=FAST_DRIVE)
        # the released phase must have actually moved the oscillator params
        assert model.population[0] != init_pop[0]

    def test_deterministic(self):
        m1, l1 = self.run_small(seed=11)
        m2, l2 = self.run_small(seed=11)
        assert m1.population == m2.population
        assert np.array_equal(m1.mlp.weights[0], m2.mlp.weights[0])
        assert l1 == l2

    def test_huge_lambda_drives_outputs_to_half(self):
        model, _ = self.run_small(epochs=30, lam=1e6)
        for seg in short_segments(4):
            assert predict(model, seg) == pytest.approx(0.5, abs=0.01)

    def test_early_loss_trend(self):
        ds = synth_dataset(2, 4, seed=5)
        cfg = TrainConfig(epochs_max=5, clamp_fraction=0.2, minibatch_size=8,
                          lam=0.001, lr=0.02, convergence_patience=99, seed=2)
        pop = [FHNParams(2.0, 0.2, 1.2, 0.6)]
        _, log = train(ds, cfg, pop, layer_sizes=[1, 4, 2], drive=FAST_DRIVE)
        neg_j = [-r.mean_j for r in log]
        rises = [max(0.0, neg_j[i + 1] - neg_j[i]) for i in range(len(neg_j) - 1)]
        big_rises = [r for r in rises if r > 0.05 * abs(neg_j[0])]
        assert len(big_rises) <= 1

    def test_convergence_stop(self):
        segs = short_segments(4)
        cfg = TrainConfig(epochs_max=50, clamp_fraction=0.0, minibatch_size=4,
                          lam=0.0, lr=1e-7, convergence_tol=1e-3,
                          convergence_patience=3, seed=0)
        _, log = train(segs, cfg, [FHNParams(2.0, 0.1, 0.3, 0.6)],
                       layer_sizes=[1, 4, 2], drive=FAST_DRIVE)
        assert len(log) < 50

    def test_empty_training_set(self):
        with pytest.raises(TrainingError):
            train([], TrainConfig(), [FHNParams(1, 0.1, 1, 0)])

    def test_layer_size_mismatch(self):
        with pytest.raises(TrainingError):
            train(short_segments(), TrainConfig(), [FHNParams(2.0, 0.1, 0.3, 0.6)],
                  layer_sizes=[3, 4, 2], drive=FAST_DRIVE)


class TestTrainLog:
    def test_format(self, tmp_path):
        records = [EpochRecord(1, -0.69, 0.12, True), EpochRecord(2, -0.5, 0.08, False)]
        path = tmp_path / "log.csv"
        write_train_log(str(path), records)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,mean_J,grad_norm,clamped"
        assert lines[1] == "1,-0.69,0.12,true"
        assert lines[2] == "2,-0.5,0.08,false"
