"""Counter-addressed noise streams: determinism, statistics, independence."""

import math

import numpy as np
import pytest

from contmeas import GAUSSIAN_ALGORITHM, ConfigurationError, NoiseStream


class TestDeterminism:
    def test_same_address_same_value(self):
        a = NoiseStream(123, stream_id=4).next_increment(1e-3)
        b = NoiseStream(123, stream_id=4).next_increment(1e-3)
        assert a == b

    def test_counter_advances_by_one(self):
        s = NoiseStream(5, stream_id=0)
        assert s.counter == 0
        s.next_increment(1e-3)
        assert s.counter == 1

    def test_counter_addressing_reproduces_tail(self):
        s = NoiseStream(9, stream_id=2)
        full = s.increments(20, 1e-3)
        tail = NoiseStream(9, stream_id=2, counter=13).increments(7, 1e-3)
        assert np.array_equal(full[13:], tail)

    def test_chunked_equals_bulk(self):
        s1 = NoiseStream(77, stream_id=1)
        bulk = s1.increments(100, 0.01)
        s2 = NoiseStream(77, stream_id=1)
        chunks = np.concatenate([s2.increments(n, 0.01) for n in (1, 2, 30, 67)])
        assert np.array_equal(bulk, chunks)

    def test_streams_differ(self):
        a = NoiseStream(1, stream_id=0).increments(8, 1e-3)
        b = NoiseStream(1, stream_id=1).increments(8, 1e-3)
        c = NoiseStream(2, stream_id=0).increments(8, 1e-3)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_algorithm_name_recorded(self):
        assert GAUSSIAN_ALGORITHM == "philox4x64-invcdf"


class TestValidation:
    def test_dt_must_be_positive(self):
        s = NoiseStream(0)
        with pytest.raises(ConfigurationError):
            s.next_increment(0.0)
        with pytest.raises(ConfigurationError):
            s.next_increment(-1e-3)

    def test_seed_bounds(self):
        NoiseStream(2**64 - 1, stream_id=2**64 - 1)
        with pytest.raises(ConfigurationError):
            NoiseStream(-1)
        with pytest.raises(ConfigurationError):
            NoiseStream(2**64)
        with pytest.raises(ConfigurationError):
            NoiseStream(0, stream_id=0, counter=-1)


class TestStatistics:
    def test_mean_and_variance_of_million(self):
        dt = 1e-3
        x = NoiseStream(2024, stream_id=0).increments(10**6, dt)
        assert abs(x.mean()) <= 4.0 * math.sqrt(dt / 10**6)
        assert abs(x.var() - dt) <= 0.01 * dt

    def test_terminal_variance_of_paths(self):
        # Var(xi(t_n)) = n dt; 1e4 paths of 100 steps, 5% tolerance
        n, dt, n_paths = 100, 1e-3, 10**4
        finals = np.array([
            NoiseStream(7, stream_id=i).wiener_path(n, dt)[-1]
            for i in range(n_paths)
        ])
        assert abs(finals.var() - n * dt) <= 0.05 * n * dt

    def test_cross_stream_correlation(self):
        n = 10**4
        a = NoiseStream(31, stream_id=0).increments(n, 1e-3)
        b = NoiseStream(31, stream_id=1).increments(n, 1e-3)
        r = np.corrcoef(a, b)[0, 1]
        assert abs(r) < 0.02


class TestWienerPath:
    def test_starts_at_zero(self):
        path = NoiseStream(3).wiener_path(10, 1e-3)
        assert path[0] == 0.0
        assert path.size == 11

    def test_single_step_path(self):
        s = NoiseStream(8, stream_id=5)
        dw = NoiseStream(8, stream_id=5).next_increment(1e-3)
        path = s.wiener_path(1, 1e-3)
        assert path[0] == 0.0
        assert path[1] == dw

    def test_path_is_cumulative_sum(self):
        incs = NoiseStream(44, stream_id=9).increments(50, 0.01)
        path = NoiseStream(44, stream_id=9).wiener_path(50, 0.01)
        assert np.allclose(path[1:], np.cumsum(incs), atol=1e-15)

    def test_needs_at_least_one_step(self):
        with pytest.raises(ConfigurationError):
            NoiseStream(0).wiener_path(0, 1e-3)
