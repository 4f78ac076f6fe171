import numpy as np
import pytest

from simpnet import tensor as T
from simpnet.errors import ShapeError
from simpnet.rng import SplitRng


class TestZeros:
    def test_small(self):
        z = T.zeros((1, 1, 2, 2))
        assert z.shape == (1, 1, 2, 2)
        assert np.array_equal(z.ravel(), [0, 0, 0, 0])

    def test_closed_form_length(self):
        z = T.zeros((2, 3, 4, 5), dtype=np.float64)
        assert z.size == 120
        assert not z.any()
        assert z.dtype == np.float64

    def test_singleton(self):
        assert T.zeros((1, 1, 1, 1)).ravel().tolist() == [0.0]

    def test_rejects_zero_dim(self):
        with pytest.raises(ShapeError):
            T.zeros((1, 0, 2, 2))

    def test_rejects_oversize(self):
        with pytest.raises(ShapeError):
            T.Shape4(2**20, 2**20, 2**20, 1)


class TestFlatIndex:
    def test_round_trip_exhaustive(self):
        shape = T.Shape4(2, 3, 4, 5)
        seen = set()
        for i in range(2):
            for j in range(3):
                for y in range(4):
                    for x in range(5):
                        off = T.flat_offset(shape, i, j, y, x)
                        assert T.unflatten_offset(shape, off) == (i, j, y, x)
                        seen.add(off)
        assert seen == set(range(shape.size))

    def test_matches_numpy_layout(self):
        shape = (2, 3, 4, 5)
        arr = np.arange(120, dtype=np.float64).reshape(shape)
        assert arr[1, 2, 3, 4] == T.flat_offset(shape, 1, 2, 3, 4)

    def test_out_of_bounds(self):
        with pytest.raises(ShapeError):
            T.flat_offset((1, 1, 2, 2), 0, 0, 2, 0)
        with pytest.raises(ShapeError):
            T.unflatten_offset((1, 1, 2, 2), 4)


class TestElementwise:
    def test_add_hand(self):
        a = np.array([1.0, 2.0]).reshape(1, 1, 1, 2)
        b = np.array([3.0, 4.0]).reshape(1, 1, 1, 2)
        assert T.add(a, b).ravel().tolist() == [4.0, 6.0]

    def test_add_shape_error(self):
        with pytest.raises(ShapeError):
            T.add(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))

    def test_mul_scalar_zero(self):
        a = np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 3)
        assert T.mul_scalar(a, 0).ravel().tolist() == [0.0, 0.0, 0.0]

    def test_sum_hand(self):
        a = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)
        assert T.tensor_sum(a) == 10.0

    def test_max(self):
        a = np.array([1.0, 9.0, 3.0, 4.0]).reshape(1, 1, 2, 2)
        assert T.max_reduce(a) == 9.0

    def test_add_commutative_associative_integers(self):
        rng = SplitRng(1)
        a = np.floor(rng.uniform((2, 2, 3, 3), -10, 10))
        b = np.floor(rng.uniform((2, 2, 3, 3), -10, 10))
        c = np.floor(rng.uniform((2, 2, 3, 3), -10, 10))
        assert np.array_equal(T.add(a, b), T.add(b, a))
        assert np.array_equal(T.add(T.add(a, b), c), T.add(a, T.add(b, c)))


class TestRandomFill:
    def test_deterministic(self):
        a = T.fill_random_uniform((2, 2, 2, 2), 0, 1, SplitRng(5))
        b = T.fill_random_uniform((2, 2, 2, 2), 0, 1, SplitRng(5))
        assert a.tobytes() == b.tobytes()

    def test_law_of_large_numbers(self):
        x = T.fill_random_uniform((1, 1, 100, 100), -1, 1, SplitRng(2), dtype=np.float64)
        assert abs(x.mean()) < 0.05

    def test_degenerate_interval(self):
        with pytest.raises(ValueError):
            T.fill_random_uniform((1, 1, 1, 1), 5, 5, SplitRng(0))

    def test_validator(self):
        with pytest.raises(ShapeError):
            T.check_tensor4(np.zeros((2, 2, 2)))
        with pytest.raises(ShapeError):
            T.check_tensor4(np.zeros((1, 1, 2, 2), dtype=np.int32))
        ok = np.zeros((1, 1, 2, 2), dtype=np.float32)
        assert T.check_tensor4(ok) is ok
