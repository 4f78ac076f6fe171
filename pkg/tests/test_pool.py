import numpy as np
import pytest

from conftest import fd_grad, rel_err
from simpnet import layers as L
from simpnet.errors import ShapeError
from simpnet.rng import SplitRng
from simpnet.tensor import unflatten_offset


class TestMaxPoolForward:
    def test_single_window(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        y, argmax = L.maxpool_forward(x)
        assert y.ravel().tolist() == [4.0]
        assert unflatten_offset((1, 1, 2, 2), int(argmax.ravel()[0])) == (0, 0, 1, 1)

    def test_tie_goes_to_first_in_scan_order(self):
        x = np.full((1, 1, 4, 4), 3.0)
        y, argmax = L.maxpool_forward(x)
        assert np.all(y == 3.0)
        # winner of each window is its top-left cell
        coords = [unflatten_offset(x.shape, int(o)) for o in argmax.ravel()]
        assert coords == [(0, 0, 0, 0), (0, 0, 0, 2), (0, 0, 2, 0), (0, 0, 2, 2)]

    def test_ramp(self):
        x = np.arange(1, 17, dtype=np.float64).reshape(1, 1, 4, 4)
        y, _ = L.maxpool_forward(x)
        assert np.array_equal(y[0, 0], [[6, 8], [14, 16]])

    def test_window_larger_than_input(self):
        with pytest.raises(ShapeError):
            L.maxpool_forward(np.zeros((1, 1, 1, 1)), window=2)

    def test_never_exceeds_input_max(self):
        rng = SplitRng(3)
        for i in range(10):
            x = rng.split(i).uniform((2, 3, 6, 6), -5, 5)
            y, _ = L.maxpool_forward(x)
            assert y.max() <= x.max()

    def test_odd_size_floors(self):
        x = np.arange(25, dtype=np.float64).reshape(1, 1, 5, 5)
        y, _ = L.maxpool_forward(x)
        assert y.shape == (1, 1, 2, 2)


class TestMaxPoolBackward:
    def test_routing_single_window(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        _, argmax = L.maxpool_forward(x)
        gx = L.maxpool_backward(argmax, np.ones((1, 1, 1, 1)), x.shape)
        assert np.array_equal(gx[0, 0], [[0, 0], [0, 1]])

    def test_non_overlapping_one_winner_per_window(self):
        rng = SplitRng(5)
        x = rng.uniform((1, 2, 6, 6), -1, 1)
        _, argmax = L.maxpool_forward(x)
        gx = L.maxpool_backward(argmax, np.ones((1, 2, 3, 3)), x.shape)
        for j in range(2):
            for wy in range(3):
                for wx in range(3):
                    window = gx[0, j, 2 * wy : 2 * wy + 2, 2 * wx : 2 * wx + 2]
                    assert (window != 0).sum() == 1

    def test_finite_differences_at_untied_points(self):
        rng = SplitRng(11)
        size = 2 * 2 * 6 * 6
        x = (rng.permutation(size).astype(np.float64) / size).reshape(2, 2, 6, 6)
        _, argmax = L.maxpool_forward(x)
        r = rng.uniform((2, 2, 3, 3), -1, 1)

        def loss():
            return float((L.maxpool_forward(x)[0] * r).sum())

        gx = L.maxpool_backward(argmax, r, x.shape)
        assert rel_err(gx, fd_grad(loss, x)) < 1e-6


class TestSafPool:
    def test_drop_zero_identical_to_maxpool_any_mode(self):
        rng = SplitRng(21)
        x = rng.uniform((2, 3, 6, 6), -1, 1)
        pooled, argmax = L.maxpool_forward(x)
        for mode in (L.TRAIN, L.EVAL):
            y, mask, am = L.saf_pool_forward(x, L.SafPoolConfig(drop_p=0.0), mode, SplitRng(0))
            assert np.array_equal(y, pooled)
            assert np.all(mask == 1.0)
            assert np.array_equal(am, argmax)

    def test_eval_mode_identity_even_with_drop(self):
        rng = SplitRng(22)
        x = rng.uniform((2, 3, 6, 6), -1, 1)
        pooled, _ = L.maxpool_forward(x)
        y, mask, _ = L.saf_pool_forward(x, L.SafPoolConfig(drop_p=0.5), L.EVAL, SplitRng(0))
        assert np.array_equal(y, pooled)
        assert np.all(mask == 1.0)

    def test_train_mode_drop_statistics_and_scale(self):
        rng = SplitRng(23)
        x = rng.uniform((4, 25, 20, 20), 0.5, 1.5)  # 10,000 pooled units
        pooled, _ = L.maxpool_forward(x)
        y, mask, _ = L.saf_pool_forward(x, L.SafPoolConfig(drop_p=0.5), L.TRAIN, SplitRng(99))
        assert y.size == 10_000
        zero_fraction = (mask == 0).mean()
        assert 0.48 <= zero_fraction <= 0.52
        survivors = mask == 1.0
        # inverted dropout: every survivor is scaled by exactly 1/(1-p) = 2
        assert np.array_equal(y[survivors], pooled[survivors] * 2.0)
        assert np.all(y[~survivors] == 0.0)

    def test_drop_p_validated(self):
        with pytest.raises(ValueError):
            L.SafPoolConfig(drop_p=1.0)
        with pytest.raises(ValueError):
            L.SafPoolConfig(drop_p=-0.1)

    def test_backward_drop_zero_equals_maxpool_backward(self):
        rng = SplitRng(24)
        x = rng.uniform((1, 2, 4, 4), -1, 1)
        _, mask, argmax = L.saf_pool_forward(x, L.SafPoolConfig(drop_p=0.0), L.TRAIN, SplitRng(0))
        g = rng.uniform((1, 2, 2, 2), -1, 1)
        assert np.array_equal(
            L.saf_pool_backward(mask, argmax, g, x.shape, 0.0),
            L.maxpool_backward(argmax, g, x.shape),
        )

    def test_backward_fully_masked_window_zero_grad(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        _, argmax = L.maxpool_forward(x)
        mask = np.zeros((1, 1, 2, 2))
        gx = L.saf_pool_backward(mask, argmax, np.ones((1, 1, 2, 2)), x.shape, 0.5)
        assert not gx.any()

    def test_backward_finite_differences_fixed_mask(self):
        rng = SplitRng(25)
        size = 1 * 2 * 6 * 6
        x = (rng.permutation(size).astype(np.float64) / size).reshape(1, 2, 6, 6)
        key = 4242
        cfg = L.SafPoolConfig(drop_p=0.5)
        _, mask, argmax = L.saf_pool_forward(x, cfg, L.TRAIN, SplitRng(key))
        r = rng.uniform((1, 2, 3, 3), -1, 1)

        def loss():
            y, _, _ = L.saf_pool_forward(x, cfg, L.TRAIN, SplitRng(key))
            return float((y * r).sum())

        gx = L.saf_pool_backward(mask, argmax, r, x.shape, cfg.drop_p)
        assert rel_err(gx, fd_grad(loss, x)) < 1e-6


class TestGlobalAvgPool:
    def test_mean(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        assert L.global_avgpool_forward(x).ravel().tolist() == [2.5]

    def test_constant_map(self):
        x = np.full((2, 3, 4, 4), 7.0)
        assert np.all(L.global_avgpool_forward(x) == 7.0)

    def test_backward_uniform_distribution(self):
        g = np.array([6.0]).reshape(1, 1, 1, 1)
        gx = L.global_avgpool_backward(g, (1, 1, 2, 3))
        assert np.allclose(gx, 1.0)

    def test_preserves_channel_total(self):
        rng = SplitRng(8)
        x = rng.uniform((2, 3, 5, 5), -1, 1)
        out = L.global_avgpool_forward(x)
        per_channel_in = x.sum(axis=(2, 3))
        per_channel_out = out[:, :, 0, 0] * 25
        denom = np.maximum(np.abs(per_channel_in), 1.0)
        assert (np.abs(per_channel_out - per_channel_in) / denom).max() <= 1e-9
