"""Counter-based random number generation.

Every draw is a pure hash of (seed, stream, counter), so corpora and noise
are bit-reproducible across platforms and can be generated out of order or
in parallel (one stream per clip). Uses the splitmix64 finalizer, which is
well distributed and cheap to vectorize with uint64 numpy arrays.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STREAM_SALT = np.uint64(0xD2B74407B1CE6E93)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(x: np.ndarray) -> np.ndarray:
    x = (x + _GOLDEN).astype(np.uint64)
    x = (x ^ (x >> np.uint64(30))) * _MIX1
    x = (x ^ (x >> np.uint64(27))) * _MIX2
    return x ^ (x >> np.uint64(31))


class CounterRng:
    """Deterministic generator keyed by (seed, stream) with an advancing counter."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        mask = 0xFFFFFFFFFFFFFFFF
        # key derivation in python ints: numpy scalar uint64 ops warn on wrap
        key = (seed & mask) ^ ((stream * int(_STREAM_SALT)) & mask)
        self._key = _mix64(np.asarray([key], dtype=np.uint64))[0]
        self.counter = 0

    def spawn(self, stream: int) -> "CounterRng":
        """Independent stream sharing this generator's seed (e.g. one per clip)."""
        return CounterRng(self.seed, stream)

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        return _mix64(self._key + idx * _GOLDEN)

    def uniform(self, shape=()) -> np.ndarray:
        """float64 samples in [0, 1)."""
        n = int(np.prod(shape)) if shape else 1
        # top 53 bits give a full-precision float64 mantissa
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)
        return u.reshape(shape) if shape else u[0]

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Gaussian samples via Box-Muller on paired uniforms."""
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        raw = self._raw(2 * pairs)
        # u1 in (0, 1] so log() is finite
        u1 = ((raw[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * (2.0**-53)
        u2 = (raw[pairs:] >> np.uint64(11)).astype(np.float64) * (2.0**-53)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        z = mean + std * z
        return z.reshape(shape) if shape else z[0]
