"""Seeded, splittable random streams.

Every random draw in the package comes from a counter-based Philox
generator keyed by (seed, purpose tag, entity index). Streams for
different (tag, index) pairs are independent, so regenerating one entity
(one fractal branch, one mixture component, one noise bank) never shifts
the draws of any other.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigError


def stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Return the generator for one (seed, tag, index) triple."""
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    tag_key = int.from_bytes(hashlib.blake2s(tag.encode()).digest()[:8], "big")
    seq = np.random.SeedSequence([int(seed), tag_key, int(index)])
    return np.random.Generator(np.random.Philox(seq))


def standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal draws via Box-Muller on uniform pairs."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    n = int(np.prod(shape)) if shape else 1
    half = (n + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1] keeps the log finite
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return z[:n].reshape(shape)
