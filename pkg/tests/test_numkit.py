import numpy as np
import pytest
from hypothesis import given, strategies as st

from homeopt import errors, numkit
from homeopt.numkit import RngStream, draw_index, fd_gradient, rng_u64


class TestElementwise:
    def test_square(self):
        np.testing.assert_array_equal(numkit.square([1.0, -2.0, 3.0]),
                                      [1.0, 4.0, 9.0])

    def test_min_elem(self):
        assert numkit.min_elem([0.5, 0.1, 0.3]) == 0.1

    def test_l2_norm_345(self):
        assert numkit.l2_norm([3.0, 4.0]) == 5.0

    def test_linf_norm(self):
        assert numkit.linf_norm([-7.0, 2.0]) == 7.0

    def test_binary_ops(self):
        a, b = np.array([1.0, 2.0]), np.array([3.0, 5.0])
        np.testing.assert_array_equal(numkit.add(a, b), [4.0, 7.0])
        np.testing.assert_array_equal(numkit.sub(a, b), [-2.0, -3.0])
        np.testing.assert_array_equal(numkit.mul(a, b), [3.0, 10.0])
        np.testing.assert_array_equal(numkit.div(a, b), [1.0 / 3.0, 0.4])
        np.testing.assert_array_equal(numkit.scale(a, 2.0), [2.0, 4.0])

    def test_dim_mismatch_is_error(self):
        with pytest.raises(errors.DimensionError):
            numkit.add([1.0], [1.0, 2.0])

    def test_division_by_zero_is_error_not_inf(self):
        with pytest.raises(errors.ValidationError):
            numkit.div([1.0, 1.0], [2.0, 0.0])
        with pytest.raises(errors.ValidationError):
            numkit.div([1.0], 0.0)


class TestDrawIndex:
    def test_deterministic_repeated_call(self):
        s = RngStream(seed=7, stream_id=0)
        k = draw_index(s, 1, 10)
        assert 0 <= k < 10
        assert draw_index(s, 1, 10) == k

    def test_n_one_always_zero(self):
        s = RngStream(seed=3)
        assert all(draw_index(s, t, 1) == 0 for t in range(20))

    def test_empty_range_is_error(self):
        with pytest.raises(errors.ValidationError):
            draw_index(RngStream(0), 0, 0)

    def test_frequencies_uniform_n4(self):
        # direct counting over 1e5 draws; each frequency within [0.24, 0.26]
        s = RngStream(seed=2024, stream_id=5)
        counts = [0, 0, 0, 0]
        trials = 100_000
        for t in range(trials):
            counts[draw_index(s, t, 4)] += 1
        for c in counts:
            assert 0.24 <= c / trials <= 0.26

    def test_streams_with_equal_identity_match(self):
        a = RngStream(seed=11, stream_id=4)
        b = RngStream(seed=11, stream_id=4)
        assert [draw_index(a, t, 97) for t in range(50)] == \
               [draw_index(b, t, 97) for t in range(50)]

    @given(st.integers(0, 2**63), st.integers(0, 2**31), st.integers(0, 10**6),
           st.integers(1, 10**6))
    def test_draw_in_range_and_pure(self, seed, sid, t, n):
        s = RngStream(seed=seed, stream_id=sid)
        k = draw_index(s, t, n)
        assert 0 <= k < n
        assert draw_index(RngStream(seed, sid), t, n) == k

    def test_counter_offset_shifts_sequence(self):
        base = RngStream(seed=5, stream_id=1, counter=0)
        shifted = RngStream(seed=5, stream_id=1, counter=10)
        assert rng_u64(base, 10) == rng_u64(shifted, 0)


class TestFdGradient:
    def test_squared_norm(self):
        g = fd_gradient(lambda x: float(np.dot(x, x)), np.array([1.0, 2.0]),
                        h=1e-5)
        np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-7)

    def test_constant_function(self):
        g = fd_gradient(lambda x: 3.25, np.array([0.3, -0.7, 2.0]), h=1e-6)
        np.testing.assert_array_equal(g, np.zeros(3))

    def test_rosenbrock_minimizer(self):
        def rosen(x):
            return float(100.0 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2)
        g = fd_gradient(rosen, np.array([1.0, 1.0]), h=1e-6)
        np.testing.assert_allclose(g, [0.0, 0.0], atol=1e-6)

    def test_nonpositive_h_rejected(self):
        with pytest.raises(errors.ValidationError):
            fd_gradient(lambda x: 0.0, np.zeros(2), h=0.0)

    def test_nonfinite_value_is_error(self):
        with pytest.raises(errors.NumericBlowupError):
            fd_gradient(lambda x: float("nan"), np.zeros(1), h=1e-6)
