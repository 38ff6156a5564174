"""Deterministic randomness policy.

A run owns a single 64-bit seed. Every consumer derives its own independent
stream with :func:`substream`, which hashes a label path into a Philox
counter block, so adding a new consumer never perturbs existing streams.
Gaussian variates are produced by inverting the normal CDF on fixed-resolution
open-interval uniforms (:func:`standard_normals`), which pins the exact byte
stream for a given seed within this implementation.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1


def substream(seed: int, *labels: object) -> np.random.Generator:
    """Return an independent generator for ``seed`` keyed by a label path.

    The labels (e.g. ``substream(seed, "sweep", row_index)``) are joined and
    SHA-256-hashed into the 128-bit Philox counter; the seed is the Philox key.
    Distinct label paths give counter blocks 2^128 apart in expectation, far
    beyond any draw count reachable here.
    """
    path = "/".join(str(label) for label in labels)
    digest = hashlib.sha256(path.encode("utf-8")).digest()
    counter = int.from_bytes(digest[:16], "little") << 64
    return np.random.Generator(np.random.Philox(key=seed & _MASK64, counter=counter))


def standard_normals(gen: np.random.Generator, shape) -> np.ndarray:
    """Draw N(0,1) variates via the inverse CDF.

    Uniforms are (j + 0.5) / 2^53 for a 53-bit integer j, so they lie strictly
    inside (0, 1) and ndtri never sees 0 or 1.
    """
    u = (gen.integers(0, 1 << 53, size=shape).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)
