"""Independent re-implementation of the portable PRNG used by the corpus
tools: MT19937-64 from its reference definition, SplitMix64 stream mixing,
Lemire bounded integers and Fisher-Yates from the end. Prints the constants
pinned in corpus_test.cpp."""

M64 = (1 << 64) - 1


class MT64:
    def __init__(self, seed):
        self.mt = [0] * 312
        self.mt[0] = seed & M64
        for i in range(1, 312):
            self.mt[i] = (6364136223846793005 * (self.mt[i - 1] ^ (self.mt[i - 1] >> 62)) + i) & M64
        self.i = 312

    def next(self):
        if self.i >= 312:
            for k in range(312):
                x = (self.mt[k] & 0xFFFFFFFF80000000) | (self.mt[(k + 1) % 312] & 0x7FFFFFFF)
                xa = x >> 1
                if x & 1:
                    xa ^= 0xB5026F5AA96619E9
                self.mt[k] = self.mt[(k + 156) % 312] ^ xa
            self.i = 0
        y = self.mt[self.i]
        self.i += 1
        y ^= (y >> 29) & 0x5555555555555555
        y ^= (y << 17) & 0x71D67FFFEDA60000
        y ^= (y << 37) & 0xFFF7EEE000000000
        y ^= y >> 43
        return y & M64


def mix_seed(seed, stream):
    z = (seed + 0x9E3779B97F4A7C15 * (stream + 1)) & M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


def below(g, bound):
    if bound <= 1:
        return 0
    m = g.next() * bound
    low = m & M64
    if low < bound:
        t = ((1 << 64) - bound) % bound
        while low < t:
            m = g.next() * bound
            low = m & M64
    return m >> 64


def permutation(g, n):
    p = list(range(n))
    for i in range(n, 1, -1):
        j = below(g, i)
        p[i - 1], p[j] = p[j], p[i - 1]
    return p


if __name__ == "__main__":
    g = MT64(5489)
    for _ in range(9999):
        g.next()
    print("mt19937_64 10000th:", g.next())
    print("mix_seed(42,1):", mix_seed(42, 1))
    for seed in (1, 2):
        print(f"seed {seed} data perm(8):", permutation(MT64(mix_seed(seed, 1)), 8))
        print(f"seed {seed} text perm(8):", permutation(MT64(mix_seed(seed, 2)), 8))
    g = MT64(mix_seed(9, 3))
    idx = list(range(10))
    out = []
    for k in range(4):
        j = k + below(g, 10 - k)
        idx[k], idx[j] = idx[j], idx[k]
        out.append(idx[k])
    print("low resource seed 9, 4 of 10:", out)
