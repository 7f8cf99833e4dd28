"""SplitMix64 pseudo-random generator.

The split sampler needs a stream that can be replayed outside Python, so it
uses this tiny fixed algorithm instead of numpy's bit generators. Reference:
Steele, Lea & Flood, "Fast splittable pseudorandom number generators" (2014).
"""

MASK64 = (1 << 64) - 1
ALGORITHM = "splitmix64"


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def randbelow(self, n: int) -> int:
        """Uniform integer in ``[0, n)``.

        Draws whose value falls below ``2**64 mod n`` are rejected so the
        remaining range is an exact multiple of ``n``; the accepted draw is
        reduced modulo ``n``.
        """
        if n <= 0:
            raise ValueError("n must be positive")
        reject_below = (1 << 64) % n
        while True:
            x = self.next_u64()
            if x >= reject_below:
                return x % n
