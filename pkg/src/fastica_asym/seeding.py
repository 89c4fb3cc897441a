"""Deterministic random streams.

Every random draw in the package comes from a Philox generator keyed by
``(master_seed, *stream_keys)``, so a trial can be recomputed in isolation,
in any process, and produce the same bits.
"""

import numpy as np

# stream key namespaces, kept distinct so sources never share a stream with inits
SOURCE_STREAM = 0
INIT_STREAM = 1
MIXING_STREAM = 2


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent generator for the stream ``(seed, *keys)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def random_orthonormal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthonormal matrix via QR of a Gaussian matrix."""
    a = rng.standard_normal((d, d))
    q, r = np.linalg.qr(a)
    # sign fix makes the draw Haar-distributed and unique given ``a``
    q *= np.where(np.diag(r) < 0, -1.0, 1.0)
    return q
