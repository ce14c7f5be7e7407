"""
SplitMix64 sequence used for k-means++ seeding.

Plain integer arithmetic, so the same seed gives the same draws on every
platform and numpy version.
"""

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """64-bit seeded generator: state += gamma, then two xor-shift-multiply rounds."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def next_index(self, n: int) -> int:
        """Uniform index in [0, n)."""
        return min(n - 1, int(self.next_float() * n))
