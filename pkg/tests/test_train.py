import csv

import numpy as np
import pytest

from retinex_ssm.autodiff import Param, Tape, Tensor, backward
from retinex_ssm.errors import ConfigError, DimensionError, UsageError
from retinex_ssm.model import build_model
from retinex_ssm.synthetic import synthetic_pair
from retinex_ssm.train import (
    AdamState,
    TrainConfig,
    adam_step,
    augment,
    cosine_lr,
    geometric,
    l1_loss,
    train_loop,
)


def flags_off(**kw):
    return TrainConfig(hflip=False, vflip=False, rot90=False, **kw)


class TestL1:
    def test_zero_for_equal(self, rng):
        x = Tensor(rng.standard_normal((2, 3)))
        assert float(l1_loss(x, x).data) == 0.0

    def test_hand_value(self):
        assert float(l1_loss(Tensor(np.array([0.0, 1.0])), Tensor(np.array([1.0, 1.0]))).data) == 0.5

    def test_homogeneous(self, rng):
        a, b = rng.standard_normal((2, 10))
        base = float(l1_loss(Tensor(a), Tensor(b)).data)
        assert float(l1_loss(Tensor(3 * a), Tensor(3 * b)).data) == pytest.approx(3 * base)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            l1_loss(Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    def test_subgradient_at_ties(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with Tape() as tape:
            loss = l1_loss(x, Tensor(np.array([1.0, 0.0])))
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, [0.0, 0.5])


class TestAdam:
    def test_first_step_is_sign(self):
        p = Param(np.array([1.0, -2.0, 0.5]), "p")
        p.grad = np.array([0.3, -7.0, 1e-3])
        adam_step([p], AdamState(), lr=0.01)
        np.testing.assert_allclose(p.data, [0.99, -1.99, 0.49], atol=1e-4)

    def test_zero_grad_no_move(self):
        p = Param(np.array([1.0, 2.0]), "p")
        adam_step([p], AdamState(), lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_grads_zeroed_and_state_advances(self):
        p = Param(np.ones((2, 2)), "p")
        p.grad = np.ones((2, 2))
        state = AdamState()
        adam_step([p], state, 1e-3)
        adam_step([p], state, 1e-3)
        assert state.t == 2 and not p.grad.any()
        assert state.m["p"].shape == state.v["p"].shape == (2, 2)

    def test_missing_grad(self):
        p = Param(np.ones(2), "p")
        p.grad = None
        with pytest.raises(UsageError):
            adam_step([p], AdamState(), 1e-3)

    def test_matches_reference_update(self, rng):
        p = Param(rng.standard_normal(4), "p")
        x = p.data.copy()
        m = v = np.zeros(4)
        state = AdamState()
        for t in range(1, 6):
            g = rng.standard_normal(4)
            p.grad = g.copy()
            adam_step([p], state, 0.05)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x = x - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p.data, x, rtol=1e-12)

    def test_finite_and_shape_preserving(self, rng):
        p = Param(rng.standard_normal((3, 2)).astype(np.float32), "p")
        p.grad = rng.standard_normal((3, 2)).astype(np.float32) * 1e6
        adam_step([p], AdamState(), 1e-3)
        assert p.shape == (3, 2) and p.dtype == np.float32 and np.isfinite(p.data).all()


class TestCosine:
    def test_endpoints_and_middle(self):
        cfg = TrainConfig(lr_max=1e-3, lr_min=1e-5, total_steps=100)
        assert cosine_lr(0, cfg) == pytest.approx(1e-3)
        assert cosine_lr(100, cfg) == pytest.approx(1e-5)
        assert cosine_lr(50, cfg) == pytest.approx((1e-3 + 1e-5) / 2)

    def test_monotone(self):
        cfg = TrainConfig(total_steps=40)
        lrs = [cosine_lr(s, cfg) for s in range(41)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    @pytest.mark.parametrize("step", [-1, 101])
    def test_out_of_range(self, step):
        with pytest.raises(UsageError):
            cosine_lr(step, TrainConfig(total_steps=100))


class TestTrainConfig:
    @pytest.mark.parametrize("kw", [{"crop": 30}, {"batch_size": 0}, {"total_steps": 0}, {"lr_min": 1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)


class TestAugment:
    def test_identity_when_off(self, rng):
        img = rng.uniform(size=(3, 8, 8))
        low, gt = augment((img, img + 1), flags_off(crop=8), rng)
        np.testing.assert_array_equal(low, img)
        np.testing.assert_array_equal(gt, img + 1)

    def test_involutions(self, rng):
        img = rng.uniform(size=(3, 5, 7))
        np.testing.assert_array_equal(geometric(geometric(img, hflip=True), hflip=True), img)
        np.testing.assert_array_equal(geometric(geometric(img, vflip=True), vflip=True), img)
        out = img
        for _ in range(4):
            out = geometric(out, rot=1)
        np.testing.assert_array_equal(out, img)

    def test_same_transform_on_both(self, rng):
        # a single bright marker must land on the same pixel in low and gt
        cfg = TrainConfig(crop=8)
        for _ in range(30):
            low = np.zeros((3, 12, 12))
            gt = np.zeros((3, 12, 12))
            y, x = rng.integers(0, 12, size=2)
            low[:, y, x] = 1.0
            gt[:, y, x] = 2.0
            a, b = augment((low, gt), cfg, rng)
            assert a.shape == b.shape == (3, 8, 8)
            np.testing.assert_array_equal(2 * a, b)

    def test_crop_too_large(self, rng):
        img = np.zeros((3, 6, 6))
        with pytest.raises(DimensionError):
            augment((img, img), TrainConfig(crop=8), rng)

    def test_pair_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            augment((np.zeros((3, 8, 8)), np.zeros((3, 8, 12))), TrainConfig(crop=8), rng)


class TestLoop:
    def test_empty_dataset(self, tiny_cfg):
        with pytest.raises(UsageError):
            train_loop([], None, tiny_cfg, TrainConfig(total_steps=1))

    def test_trace_and_lr_endpoints(self, tmp_path, tiny_cfg):
        pair = synthetic_pair(16, 0)
        cfg = flags_off(total_steps=4, batch_size=1, crop=16, lr_max=1e-3, lr_min=1e-5)
        trace = tmp_path / "trace.csv"
        res = train_loop([pair], None, tiny_cfg, cfg, trace_path=trace)
        rows = list(csv.reader(trace.open()))
        assert rows[0] == ["step", "lr", "l1"] and len(rows) == 5
        assert res.lrs[0] == 1e-3 and res.lrs[-1] == pytest.approx(1e-5)
        assert [float(r[2]) for r in rows[1:]] == pytest.approx(res.losses)

    def test_bitwise_reproducible(self, tiny_cfg):
        data = [synthetic_pair(16, s) for s in range(3)]
        cfg = TrainConfig(total_steps=3, batch_size=2, crop=8)
        r1 = train_loop(data, None, tiny_cfg, cfg)
        r2 = train_loop(data, None, tiny_cfg, cfg)
        assert r1.losses == r2.losses
        for a, b in zip(r1.weights.params(), r2.weights.params()):
            assert a.data.tobytes() == b.data.tobytes()

    def test_loss_decreases(self, tiny_cfg):
        cfg = flags_off(total_steps=15, batch_size=1, crop=16, lr_max=2e-3)
        res = train_loop([synthetic_pair(16, 0)], build_model(tiny_cfg), tiny_cfg, cfg)
        assert np.mean(res.losses[-3:]) < 0.5 * res.losses[0]
