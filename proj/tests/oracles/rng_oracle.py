#!/usr/bin/env python3
"""Reference SplitMix64 / Lemire / Fisher-Yates used to freeze test vectors."""
M = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.s = seed & M

    def next(self):
        self.s = (self.s + 0x9E3779B97F4A7C15) & M
        z = self.s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
        return z ^ (z >> 31)

    def bounded(self, r):
        x = self.next()
        m = x * r
        low = m & M
        if low < r:
            t = ((1 << 64) - r) % r
            while low < t:
                x = self.next()
                m = x * r
                low = m & M
        return m >> 64


def shuffled(n, seed):
    g = SplitMix64(seed)
    idx = list(range(n))
    for i in range(n, 1, -1):
        j = g.bounded(i)
        idx[i - 1], idx[j] = idx[j], idx[i - 1]
    return idx


if __name__ == "__main__":
    g = SplitMix64(1234567)
    print("splitmix64(1234567):", [g.next() for _ in range(5)])
    g = SplitMix64(42)
    print("bounded(42, 10) x8:", [g.bounded(10) for _ in range(8)])
    print("shuffled(10, 7):", shuffled(10, 7))
    print("shuffled(8365, 3)[:5]:", shuffled(8365, 3)[:5])
