"""Deterministic, seedable Wiener-increment streams.

Each trajectory owns one counter-based stream addressed by
``(master_seed, stream_id, counter)``. The mapping from address to variate
is fixed: raw 64-bit word number ``counter`` of the Philox-4x64 keyed
generator is turned into a uniform in (0, 1) by taking its top 53 bits,
then into a standard normal through the inverse CDF, then scaled by
sqrt(dt). Because the address fully determines the value, ensembles are
independent of scheduling and worker count, and adding trajectories never
perturbs existing ones.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .errors import ConfigurationError

GAUSSIAN_ALGORITHM = "philox4x64-invcdf"

_U64 = 1 << 64
# Philox-4x64 emits four 64-bit words per counter block; advancing the
# bit generator by one skips one full block.
_WORDS_PER_BLOCK = 4


def _check_u64(value, name):
    if not isinstance(value, (int, np.integer)):
        raise ConfigurationError([(name, "must be an integer")])
    value = int(value)
    if not 0 <= value < _U64:
        raise ConfigurationError([(name, "must fit in 64 bits (0 <= value < 2**64)")])
    return value


class NoiseStream:
    """One trajectory's stream of Wiener increments.

    Parameters
    ----------
    master_seed : int
        Run-level seed, 64-bit.
    stream_id : int
        Trajectory index, 64-bit. Distinct ids give statistically
        independent streams under the keyed Philox generator.
    counter : int
        Index of the next variate to be drawn. Streams with identical
        (master_seed, stream_id, counter) produce identical values,
        bit-exact, on every platform and schedule.
    """

    def __init__(self, master_seed, stream_id=0, counter=0):
        self.master_seed = _check_u64(master_seed, "master_seed")
        self.stream_id = _check_u64(stream_id, "stream_id")
        if not isinstance(counter, (int, np.integer)) or counter < 0:
            raise ConfigurationError([("counter", "must be a non-negative integer")])
        self.counter = int(counter)

    def _raw_words(self, n):
        """Raw 64-bit words number counter .. counter+n-1 of this stream."""
        bitgen = Philox(key=[self.master_seed, self.stream_id])
        bitgen.advance(self.counter // _WORDS_PER_BLOCK)
        skip = self.counter % _WORDS_PER_BLOCK
        return bitgen.random_raw(skip + n)[skip:]

    def increments(self, n, dt):
        """Draw ``n`` consecutive increments, each Normal(0, dt).

        Advances the counter by ``n``. Equivalent to ``n`` calls of
        :meth:`next_increment`, value for value.
        """
        if dt <= 0.0 or not math.isfinite(dt):
            raise ConfigurationError([("dt", "must be a positive finite number")])
        if n < 0:
            raise ConfigurationError([("n", "must be non-negative")])
        if n == 0:
            return np.empty(0)
        raw = self._raw_words(n)
        u = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54
        z = ndtri(u)
        self.counter += n
        return z * math.sqrt(dt)

    def next_increment(self, dt):
        """Draw one increment Normal(0, dt) and advance the counter by 1."""
        return float(self.increments(1, dt)[0])

    def wiener_path(self, n_steps, dt):
        """Cumulative path (xi(t_0), ..., xi(t_n)) with xi(0) = 0."""
        if n_steps < 1:
            raise ConfigurationError([("n_steps", "must be at least 1")])
        incs = self.increments(n_steps, dt)
        path = np.empty(n_steps + 1)
        path[0] = 0.0
        np.cumsum(incs, out=path[1:])
        return path

    def __repr__(self):
        return (
            f"NoiseStream(master_seed={self.master_seed}, "
            f"stream_id={self.stream_id}, counter={self.counter})"
        )
