import numpy as np


def derive_seed(seed, *keys):
    """Stable 64-bit child seed for (seed, *keys); independent of call order."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1)] + [int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed, *keys):
    return np.random.default_rng(derive_seed(seed, *keys))
