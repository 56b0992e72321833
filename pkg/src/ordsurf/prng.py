"""SplitMix64 pseudo-random stream.

Every random draw in the package (crop positions, weight init, synthetic
scenes) comes from this generator so that sequences are reproducible from a
seed alone, in any language.

Update rule, all arithmetic modulo 2**64::

    state = state + 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    output = z ^ (z >> 31)

Derived draws:

* ``uniform()``    -> (output >> 11) * 2**-53, in [0, 1)
* ``randbelow(n)`` -> rejection sampling: redraw while output >= 2**64 - (2**64 mod n),
  then output mod n
* ``normal()``     -> Box-Muller on two uniforms u1, u2:
  sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
* ``split(i)``     -> new stream seeded with mix(state ^ mix(i + GOLDEN)), where mix is
  the output finalizer above applied to a raw 64-bit value
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError(f"randbelow needs n >= 1, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed range [lo, hi]."""
        return lo + self.randbelow(hi - lo + 1)

    def normal(self) -> float:
        return float(self.normals(1)[0])

    def split(self, index: int) -> "SplitMix64":
        return SplitMix64(mix64(self.state ^ mix64(int(index) + GOLDEN)))

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` consecutive ``uniform()`` draws, vectorized; advances the state by n."""
        if n == 0:
            return np.zeros(0, dtype=np.float64)
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN) & MASK64
        return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def normals(self, n: int) -> np.ndarray:
        u = self.uniforms(2 * n).reshape(n, 2)
        return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
