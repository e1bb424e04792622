"""Synthetic window datasets with known answers, for sanity-checking the sampler."""

import numpy as np

from ..perception import Stats
from .policy import Batch, Windows


def two_mode_windows(n, dim=40, spread=0.1, cond_dim=(4, 4), seed=0):
    """Windows drawn from +c or -c (c = ones) with isotropic ``spread``, no conditioning signal.

    Returns (windows, centers, spread) with centers and spread in normalized units.
    """
    rng = np.random.default_rng(seed)
    sign = rng.choice([-1.0, 1.0], size=n)
    c = np.ones(dim)
    A = sign[:, None] * c + spread * rng.standard_normal((n, dim))
    stats = Stats(A.mean(axis=0), A.std(axis=0))
    An = (A - stats.mean) / stats.std
    centers = np.stack([(c - stats.mean) / stats.std, (-c - stats.mean) / stats.std])
    batch = Batch(An, np.zeros((n, cond_dim[0])), np.zeros((n, cond_dim[1])))
    return Windows(batch, Stats(np.zeros(1), np.ones(1)), stats), centers, spread / stats.std


def constant_windows(n, value, cond_dim=(4, 4)):
    """Every row equals ``value`` (already in normalized units)."""
    value = np.asarray(value, dtype=float)
    batch = Batch(np.tile(value, (n, 1)), np.zeros((n, cond_dim[0])), np.zeros((n, cond_dim[1])))
    one = Stats(np.zeros(len(value)), np.ones(len(value)))
    return Windows(batch, Stats(np.zeros(1), np.ones(1)), one)


def assign_modes(samples, centers, spread):
    """Nearest center per sample and its RMS distance in units of the mode spread."""
    d = np.stack([np.sqrt(np.mean(((samples - c) / spread) ** 2, axis=1)) for c in centers])
    return d.argmin(axis=0), d.min(axis=0)
