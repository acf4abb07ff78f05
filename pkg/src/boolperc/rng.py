"""Deterministic seed derivation for replica- and site-parallel sampling.

All randomness in the package flows from one master seed through
``substream``.  Each consumer derives an independent generator from the
master seed plus an integer path (domain tag, replica index, interval
index, site coordinates, ...), so results never depend on execution
order or worker count.
"""
from __future__ import annotations

import numpy as np

# Domain tags keep unrelated consumers of the same master seed apart.
DOMAIN_OCCUPANCY = 1
DOMAIN_RADII = 2
DOMAIN_REPLICA = 3
DOMAIN_SCHEDULE = 4
DOMAIN_COUPLING = 5


def zigzag(n: int) -> int:
    """Map a signed integer to a non-negative one, injectively."""
    return 2 * n if n >= 0 else -2 * n - 1


def substream(master_seed: int, *path: int) -> np.random.Generator:
    """Generator for the derived stream ``(master_seed, *path)``.

    Path entries may be negative (site coordinates); they are zigzag
    encoded before feeding the seed sequence.
    """
    entropy = [zigzag(int(master_seed))] + [zigzag(int(p)) for p in path]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def uniforms_halfopen(gen: np.random.Generator, n: int) -> np.ndarray:
    """Uniforms in (0, 1], suitable for generalized-inverse sampling.

    ``1 - random()`` lands in (0, 1]; the exact value 1.0 (probability
    2**-53 per draw) is nudged to the largest float below 1 so that
    unbounded laws never see an infinite quantile.
    """
    u = 1.0 - gen.random(n)
    exact_one = u >= 1.0
    if exact_one.any():
        u[exact_one] = np.nextafter(1.0, 0.0)
    return u


def uniform_halfopen(gen: np.random.Generator) -> float:
    u = 1.0 - gen.random()
    if u >= 1.0:
        u = float(np.nextafter(1.0, 0.0))
    return u
