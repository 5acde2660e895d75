"""Training loop: schedule, evaluation, determinism, and parity with an
independently written plain-SGD reference."""

import csv
import os

import numpy as np
import pytest

from reference_trainer import PlainMlpTrainer
from revnet.errors import ConfigError, NumericError
from revnet.layers import ReverseConfig
from revnet.network import NetworkSpec
from revnet.training import (
    METRICS_COLUMNS,
    MetricsRow,
    TrainConfig,
    batch_order,
    confusion_counts,
    evaluate,
    lr_at,
    run_experiment,
    train_step,
)


def mlp(n_in=64, hidden=32, n_classes=10, seed=0, dtype=np.float64, rcfg=None):
    spec = NetworkSpec((n_in,), n_classes, [f"dense:{hidden}", "lrelu", f"dense:{n_classes}", "softmax"])
    return spec.build(np.random.default_rng(seed), dtype=dtype, rcfg=rcfg)


def toy_data(n=256, n_in=64, n_classes=10, seed=3, dtype=np.float64):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, size=n)
    # class-dependent mean so the problem is learnable
    centers = rng.normal(size=(n_classes, n_in))
    x = centers[labels] + 0.3 * rng.normal(size=(n, n_in))
    return x.astype(dtype), labels.astype(np.int64)


class TestTrainConfig:
    def test_defaults_valid(self):
        cfg = TrainConfig()
        assert cfg.lr_drop_epochs == (20, 40, 60)

    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr0=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(momentum=1.0)
        with pytest.raises(ConfigError):
            TrainConfig(momentum=-0.1)
        with pytest.raises(ConfigError):
            TrainConfig(train_batch=0)
        with pytest.raises(ConfigError):
            TrainConfig(lr_drop_epochs=(10, 10))
        with pytest.raises(ConfigError):
            TrainConfig(lr_drop_epochs=(20, 10))
        with pytest.raises(ConfigError):
            TrainConfig(gen_target="argmax")


class TestLrSchedule:
    def test_default_steps(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == pytest.approx(0.1)
        assert lr_at(19, cfg) == pytest.approx(0.1)
        assert lr_at(20, cfg) == pytest.approx(0.01)
        assert lr_at(40, cfg) == pytest.approx(1e-3)
        assert lr_at(60, cfg) == pytest.approx(1e-4)
        assert lr_at(100, cfg) == pytest.approx(1e-4)

    def test_no_drops_constant(self):
        cfg = TrainConfig(lr0=0.5, lr_drop_epochs=())
        for e in (0, 10, 1000):
            assert lr_at(e, cfg) == 0.5

    def test_negative_epoch_rejected(self):
        with pytest.raises(ConfigError):
            lr_at(-1, TrainConfig())


class TestBatchOrder:
    def test_partition(self):
        rng = np.random.default_rng(0)
        batches = batch_order(103, 20, rng)
        sizes = [len(b) for b in batches]
        assert sizes == [20, 20, 20, 20, 20, 3]
        seen = np.sort(np.concatenate(batches))
        assert np.array_equal(seen, np.arange(103))

    def test_deterministic(self):
        a = batch_order(50, 8, np.random.default_rng(7))
        b = batch_order(50, 8, np.random.default_rng(7))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)


class TestConfusion:
    def test_against_loop_oracle(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 7, size=1000)
        preds = rng.integers(0, 7, size=1000)
        m = confusion_counts(labels, preds, 7)
        expect = np.zeros((7, 7), dtype=np.int64)
        for l, p in zip(labels, preds):
            expect[l, p] += 1
        assert np.array_equal(m, expect)
        assert m.sum() == 1000


class TestEvaluate:
    def constant_net(self, n_classes=3, winner=1):
        net = mlp(n_in=4, hidden=4, n_classes=n_classes)
        for layer in net.param_layers():
            layer.W[:] = 0
            layer.b[:] = 0
        net.param_layers()[-1].b[winner] = 10.0
        return net

    def test_constant_predictor_error_and_recall(self):
        net = self.constant_net()
        x = np.zeros((4, 4))
        y = np.array([0, 1, 1, 2])
        err, _, recall = evaluate(net, x, y, 3)
        assert err == pytest.approx(50.0)
        assert np.allclose(recall, [0.0, 1.0, 0.0])

    def test_absent_class_recall_zero(self):
        net = self.constant_net(n_classes=4)
        x = np.zeros((2, 4))
        y = np.array([1, 1])
        err, _, recall = evaluate(net, x, y, 4)
        assert err == 0.0
        assert recall[3] == 0.0

    def test_uniform_predictor_loss(self):
        net = self.constant_net()
        net.param_layers()[-1].b[:] = 0
        x = np.zeros((5, 4))
        y = np.array([0, 1, 2, 0, 1])
        _, loss, _ = evaluate(net, x, y, 3)
        assert loss == pytest.approx(np.log(3.0), abs=1e-12)

    def test_batching_invariant(self):
        net = mlp(n_in=4, hidden=8, n_classes=3, seed=5)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(23, 4))
        y = rng.integers(0, 3, size=23)
        a = evaluate(net, x, y, 3, batch_size=100)
        b = evaluate(net, x, y, 3, batch_size=7)
        assert a[0] == b[0]
        assert a[1] == pytest.approx(b[1], rel=1e-12)

    def test_empty_rejected(self):
        net = mlp(n_in=4, hidden=4, n_classes=3)
        with pytest.raises(ConfigError):
            evaluate(net, np.zeros((0, 4)), np.zeros(0, dtype=np.int64), 3)


class TestPlainSgdParity:
    """With the reverse loss and generation disabled, the trainer is plain
    momentum SGD; per-step losses must match an independently written
    reference to high precision."""

    def test_fifty_steps(self):
        net = mlp(n_in=64, hidden=32, n_classes=10, seed=11)
        d1, d2 = net.param_layers()
        ref = PlainMlpTrainer(
            d1.W, d1.b, d2.W, d2.b,
            lr=0.05, momentum=0.9, weight_decay=1e-4,
        )
        cfg = TrainConfig(
            lr0=0.05, lr_drop_epochs=(), enable_reverse_loss=False,
            enable_generation=False,
        )
        x, y = toy_data(n=640, seed=12)
        rng = np.random.default_rng(0)
        worst = 0.0
        for step in range(50):
            lo = (step * 32) % 640
            xb, yb = x[lo:lo + 32], y[lo:lo + 32]
            rep, _ = train_step(net, (xb, yb), cfg, rng, epoch=0)
            ref_loss = ref.step(xb, yb)
            worst = max(worst, abs(rep.cls - ref_loss))
        assert worst < 1e-9
        assert np.max(np.abs(d1.W - ref.w1)) < 1e-9
        assert np.max(np.abs(d2.W - ref.w2)) < 1e-9


class TestModeContract:
    def step_once(self, cfg, seed=0):
        net = mlp(n_in=16, hidden=12, n_classes=4, seed=seed)
        x, y = toy_data(n=8, n_in=16, n_classes=4, seed=21)
        rep, _ = train_step(net, (x, y), cfg, np.random.default_rng(5), epoch=0)
        return net, rep

    def test_plain_mode_zeroes_extra_terms(self):
        cfg = TrainConfig(enable_reverse_loss=False, enable_generation=False)
        _, rep = self.step_once(cfg)
        assert rep.rec == 0.0
        assert rep.gen == 0.0
        assert rep.cls > 0.0
        assert rep.total == rep.cls

    def test_reversible_mode_activates_terms(self):
        cfg = TrainConfig()
        _, rep = self.step_once(cfg)
        assert rep.rec > 0.0
        assert rep.gen > 0.0
        assert rep.total == pytest.approx(rep.cls + rep.rec + rep.gen)

    def test_warmup_delays_generation(self):
        cfg = TrainConfig(warmup_epochs=2, enable_reverse_loss=False)
        net = mlp(n_in=16, hidden=12, n_classes=4)
        x, y = toy_data(n=8, n_in=16, n_classes=4, seed=21)
        rep0, _ = train_step(net, (x, y), cfg, np.random.default_rng(5), epoch=0)
        rep2, _ = train_step(net, (x, y), cfg, np.random.default_rng(5), epoch=2)
        assert rep0.gen == 0.0
        assert rep2.gen > 0.0

    def test_loss_weights_scale_total(self):
        cfg = TrainConfig(w_rec=0.25, w_gen=0.0)
        _, rep = self.step_once(cfg)
        assert rep.total == pytest.approx(rep.cls + 0.25 * rep.rec)

    def test_stop_grad_limits_generation_reach(self):
        # the generated latent comes from reversing the classification
        # tail, so full differentiation adds tied gradients for the tail
        # weights and the previous layer's bias; with stop_grad the term
        # becomes tail-only. Either way the first dense weight matrix
        # stays exactly where a generation-free run puts it.
        x, y = toy_data(n=8, n_in=16, n_classes=4, seed=21)

        def one(enable_gen, stop):
            net = mlp(n_in=16, hidden=12, n_classes=4, seed=9)
            cfg = TrainConfig(enable_reverse_loss=False, enable_generation=enable_gen,
                              gen_stop_grad=stop)
            train_step(net, (x, y), cfg, np.random.default_rng(5), epoch=0)
            return net.param_layers()

        # no-gen run, stop-grad run, full-grad run
        off = one(False, False)
        stop = one(True, True)
        full = one(True, False)
        assert np.array_equal(off[0].W, stop[0].W)
        assert np.array_equal(off[0].b, stop[0].b)
        assert not np.array_equal(off[1].W, stop[1].W)
        assert np.array_equal(off[0].W, full[0].W)
        assert not np.array_equal(off[0].b, full[0].b)

    def test_gen_target_switch_changes_update(self):
        x, y = toy_data(n=8, n_in=16, n_classes=4, seed=21)

        def one(target):
            net = mlp(n_in=16, hidden=12, n_classes=4, seed=9)
            cfg = TrainConfig(enable_reverse_loss=False, gen_target=target)
            rep, _ = train_step(net, (x, y), cfg, np.random.default_rng(5), epoch=0)
            return rep

        a = one("label")
        b = one("transformed")
        assert a.gen != b.gen

    def test_clip_bounds_update_size(self):
        x, y = toy_data(n=8, n_in=16, n_classes=4, seed=21)

        def first_step_delta(clip):
            net = mlp(n_in=16, hidden=12, n_classes=4, seed=9)
            before = net.param_layers()[0].W.copy()
            cfg = TrainConfig(lr0=1.0, momentum=0.0, weight_decay=0.0,
                              enable_reverse_loss=False, enable_generation=False,
                              clip_grad_norm=clip)
            train_step(net, (x, y), cfg, np.random.default_rng(5), epoch=0)
            return net.param_layers()[0].W - before

        free = first_step_delta(0.0)
        clipped = first_step_delta(1e-4)
        norm_free = np.linalg.norm(free)
        norm_clipped = np.linalg.norm(clipped)
        assert norm_clipped < norm_free
        # direction preserved: clipped update is a positive scalar multiple
        cos = np.sum(free * clipped) / (norm_free * norm_clipped)
        assert cos == pytest.approx(1.0, abs=1e-10)

    def test_non_finite_loss_raises(self):
        net = mlp(n_in=16, hidden=12, n_classes=4)
        x = np.full((4, 16), np.nan)
        y = np.zeros(4, dtype=np.int64)
        cfg = TrainConfig(enable_reverse_loss=False, enable_generation=False)
        with pytest.raises(NumericError):
            train_step(net, (x, y), cfg, np.random.default_rng(0))


class TestDescent:
    def test_loss_decreases_on_learnable_toy(self):
        net = mlp(n_in=16, hidden=24, n_classes=4, seed=2)
        x, y = toy_data(n=512, n_in=16, n_classes=4, seed=13)
        cfg = TrainConfig(lr0=0.05, lr_drop_epochs=(), enable_reverse_loss=False,
                          enable_generation=False)
        rng = np.random.default_rng(0)
        losses = []
        for step in range(40):
            lo = (step * 32) % 512
            rep, _ = train_step(net, (x[lo:lo + 32], y[lo:lo + 32]), cfg, rng)
            losses.append(rep.cls)
        assert np.mean(losses[-5:]) < 0.5 * np.mean(losses[:5])


class TestRunExperiment:
    def setup_run(self, cfg, seed=0, n=60, out_dir=None):
        # the forward-map reverse activation keeps the tied reverse pass
        # bounded on random data, matching how full runs are configured
        net = mlp(n_in=16, hidden=12, n_classes=4, seed=seed, dtype=np.float32,
                  rcfg=ReverseConfig(activation="forward"))
        xtr, ytr = toy_data(n=n, n_in=16, n_classes=4, seed=31, dtype=np.float32)
        xte, yte = toy_data(n=20, n_in=16, n_classes=4, seed=32, dtype=np.float32)
        return run_experiment(net, xtr, ytr, xte, yte, 4, cfg, out_dir=out_dir), net

    def test_row_layout(self):
        cfg = TrainConfig(epochs=2, train_batch=16, enable_reverse_loss=False,
                          enable_generation=False)
        (rows, final_eval), _ = self.setup_run(cfg, n=40)
        # 40 samples in batches of 16 -> 3 steps per epoch
        assert len(rows) == 6
        assert [r.step for r in rows] == list(range(6))
        assert [r.epoch for r in rows] == [0, 0, 0, 1, 1, 1]
        for i, row in enumerate(rows):
            if i in (2, 5):
                assert row.test_err is not None
            else:
                assert row.test_err is None
        assert final_eval[0] == rows[-1].test_err

    def test_metrics_csv_contents(self, tmp_path):
        cfg = TrainConfig(epochs=2, train_batch=32, lr_drop_epochs=(1,),
                          determinism=True, enable_reverse_loss=False,
                          enable_generation=False)
        (rows, _), _ = self.setup_run(cfg, out_dir=str(tmp_path))
        with open(tmp_path / "metrics.csv", newline="") as fh:
            got = list(csv.reader(fh))
        assert got[0] == METRICS_COLUMNS
        assert len(got) == 1 + len(rows)
        for line, row in zip(got[1:], rows):
            assert line == row.to_csv()
            assert line[-1] == "0.000"
        assert os.path.exists(tmp_path / "checkpoint-final.rvnt")
        assert os.path.exists(tmp_path / "checkpoint-epoch001.rvnt")

    def test_deterministic_rerun_identical(self):
        cfg = TrainConfig(epochs=2, train_batch=16, determinism=True, seed=4,
                          lr0=0.01, w_rec=1.0 / 16, clip_grad_norm=5.0)
        (rows_a, _), net_a = self.setup_run(cfg)
        (rows_b, _), net_b = self.setup_run(cfg)
        assert [r.to_csv() for r in rows_a] == [r.to_csv() for r in rows_b]
        for la, lb in zip(net_a.param_layers(), net_b.param_layers()):
            assert np.array_equal(la.W, lb.W)
            assert np.array_equal(la.b, lb.b)

    def test_seed_changes_trajectory(self):
        cfg_a = TrainConfig(epochs=1, train_batch=16, determinism=True, seed=4,
                            lr0=0.01, w_rec=1.0 / 16, clip_grad_norm=5.0)
        cfg_b = TrainConfig(epochs=1, train_batch=16, determinism=True, seed=5,
                            lr0=0.01, w_rec=1.0 / 16, clip_grad_norm=5.0)
        (rows_a, _), _ = self.setup_run(cfg_a)
        (rows_b, _), _ = self.setup_run(cfg_b)
        assert [r.to_csv() for r in rows_a] != [r.to_csv() for r in rows_b]

    def test_log_and_hook_called_per_epoch(self):
        cfg = TrainConfig(epochs=3, train_batch=32, enable_reverse_loss=False,
                          enable_generation=False)
        lines = []
        seen = []
        net = mlp(n_in=16, hidden=12, n_classes=4, dtype=np.float32)
        xtr, ytr = toy_data(n=32, n_in=16, n_classes=4, seed=31, dtype=np.float32)
        run_experiment(net, xtr, ytr, xtr, ytr, 4, cfg, log=lines.append,
                       epoch_hook=lambda e, n: seen.append((e, n is net)))
        assert len(lines) == 3
        assert seen == [(0, True), (1, True), (2, True)]

    def test_augment_fn_applied(self):
        calls = []

        def fake_augment(xb, rng):
            calls.append(xb.shape[0])
            return xb

        cfg = TrainConfig(epochs=1, train_batch=16, augment=True,
                          enable_reverse_loss=False, enable_generation=False)
        net = mlp(n_in=16, hidden=12, n_classes=4, dtype=np.float32)
        xtr, ytr = toy_data(n=48, n_in=16, n_classes=4, seed=31, dtype=np.float32)
        run_experiment(net, xtr, ytr, xtr, ytr, 4, cfg, augment_fn=fake_augment)
        assert calls == [16, 16, 16]


class TestMetricsRow:
    def test_formatting(self):
        from revnet.losses import LossReport

        row = MetricsRow(1, 7, 0.01, LossReport(cls=0.5, rec=1.25, gen=0.0),
                         12.5, None, 0.1234)
        cells = row.to_csv()
        assert cells[0] == "1"
        assert cells[1] == "7"
        assert cells[2] == "0.01"
        assert cells[3] == "1.75"
        assert cells[7] == "12.5000"
        assert cells[8] == ""
        assert cells[9] == "0.123"

    def test_test_err_present(self):
        from revnet.losses import LossReport

        row = MetricsRow(0, 0, 0.1, LossReport(), 0.0, 4.5, 0.0)
        assert row.to_csv()[8] == "4.5000"
