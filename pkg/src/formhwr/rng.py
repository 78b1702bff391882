"""Deterministic random streams: splitmix64 seeding a xoshiro256** generator.

Both algorithms are implemented exactly as published (Blackman & Vigna,
public-domain reference code) so that a stream can be reproduced bit-for-bit
from any language given the same 64-bit seed:

  splitmix64 step, from state ``x``:
      z = (x + 0x9E3779B97F4A7C15) mod 2^64
      z = ((z XOR (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
      z = ((z XOR (z >> 27)) * 0x94D049BB133111EB) mod 2^64
      output z XOR (z >> 31); new state is x + 0x9E3779B97F4A7C15

  xoshiro256** step, from state (s0, s1, s2, s3):
      output rotl(s1 * 5, 7) * 9   (mod 2^64, rotl = 64-bit rotate left)
      t = s2 := s2 XOR s0; s3 ^= s1; s1 ^= s2 is applied as below

The state update follows the reference ordering:
      t = s1 << 17
      s2 ^= s0;  s3 ^= s1;  s1 ^= s2;  s0 ^= s3;  s2 ^= t
      s3 = rotl(s3, 45)

Derived quantities are likewise pinned down:

  * ``random()`` is ``(next_u64() >> 11) * 2**-53`` (53-bit mantissa in [0, 1)).
  * ``randbelow(n)`` is ``next_u64() % n`` (the modulo bias of at most
    n / 2^64 is irrelevant at the sizes used here).
  * ``gauss()`` is one Box-Muller cosine draw per call, no caching:
    ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`` with u1 drawn before u2.
  * ``shuffle()`` is a Fisher-Yates pass from the last index down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TWO_POW_53 = float(1 << 53)


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step. Returns ``(new_state, output)``."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def mix_seed(root_seed: int, sample_index: int) -> int:
    """Derive the sub-seed for one sample of a run.

    ``mix(root, i) = sm(root XOR sm(i))`` where ``sm(x)`` is the output of a
    single splitmix64 step started from state ``x``. Identical inputs give
    identical sub-seeds in any conforming implementation.
    """
    _, a = splitmix64(sample_index & _MASK64)
    _, b = splitmix64((root_seed & _MASK64) ^ a)
    return b


class Xoshiro256StarStar:
    """xoshiro256** stream, state seeded from splitmix64 as recommended."""

    __slots__ = ("_s0", "_s1", "_s2", "_s3")

    def __init__(self, seed: int):
        state = seed & _MASK64
        state, self._s0 = splitmix64(state)
        state, self._s1 = splitmix64(state)
        state, self._s2 = splitmix64(state)
        state, self._s3 = splitmix64(state)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        x = (s1 * 5) & _MASK64
        x = ((x << 7) | (x >> 57)) & _MASK64
        result = (x * 9) & _MASK64

        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64

        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def random(self) -> float:
        return (self.next_u64() >> 11) / _TWO_POW_53

    def random_array(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = (self.next_u64() >> 11) / _TWO_POW_53
        return out

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError(f"randbelow needs n >= 1, got {n}")
        return self.next_u64() % n

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the inclusive range [lo, hi]."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.randbelow(hi - lo + 1)

    def gauss(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        u1 = self.random()
        u2 = self.random()
        z = math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)
        return mu + sigma * z

    def choice(self, seq):
        if not seq:
            raise ValueError("choice from an empty sequence")
        return seq[self.randbelow(len(seq))]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]


@dataclass(frozen=True)
class SeedStream:
    """Addressable random stream: (root seed, sample index) -> xoshiro stream.

    Two SeedStreams with equal fields yield bit-identical streams, so samples
    can be generated out of order and across worker processes.
    """

    root_seed: int
    sample_index: int = 0

    def __post_init__(self):
        if self.sample_index < 0:
            raise ValueError(f"sample_index must be >= 0, got {self.sample_index}")

    @property
    def sub_seed(self) -> int:
        return mix_seed(self.root_seed, self.sample_index)

    def rng(self) -> Xoshiro256StarStar:
        return Xoshiro256StarStar(self.sub_seed)


def as_rng(seed: "SeedStream | Xoshiro256StarStar | int") -> Xoshiro256StarStar:
    """Accept a SeedStream, an existing stream, or a bare integer seed.

    Passing an existing stream lets pipeline stages consume one per-sample
    stream sequentially; passing a SeedStream starts a fresh stream.
    """
    if isinstance(seed, Xoshiro256StarStar):
        return seed
    if isinstance(seed, SeedStream):
        return seed.rng()
    if isinstance(seed, int):
        return SeedStream(seed).rng()
    raise TypeError(f"cannot derive a random stream from {type(seed).__name__}")
