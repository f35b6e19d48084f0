"""Counter-based splitmix64 generator.

The i-th 64-bit draw of a stream seeded with ``seed`` is
``mix(seed + (i + 1) * GOLDEN)``, so draws are a pure function of
``(seed, i)`` and identical on every platform with IEEE doubles.
Named child streams hash the name into a fresh seed, which makes the
draws of one component independent of how many values other
components consumed.
"""

import hashlib

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Rng:
    def __init__(self, seed):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def child(self, name):
        """Independent stream keyed by ``name``; does not advance this one."""
        h = hashlib.blake2b(f"{self.seed}/{name}".encode(), digest_size=8).digest()
        return Rng(int.from_bytes(h, "little"))

    def next_u64(self, n):
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + idx * GOLDEN)

    def uniform(self, size=None):
        """Floats in [0, 1) built from the top 53 bits."""
        n = int(np.prod(size)) if size is not None else 1
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return u.reshape(size) if size is not None else float(u[0])

    def normal(self, size, std=1.0):
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        # 1 - u1 lies in (0, 1], keeping the log finite
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return (z[:n] * std).reshape(shape)

    def truncated_normal(self, size, std=1.0, bound=2.0):
        """Normal samples resampled until they lie within ``bound`` std devs."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        z = self.normal(shape).ravel()
        bad = np.abs(z) > bound
        while bad.any():
            z[bad] = self.normal(int(bad.sum()))
            bad = np.abs(z) > bound
        return (z * std).reshape(shape)

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        u = self.uniform(max(n - 1, 0)) if n > 1 else np.empty(0)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm
