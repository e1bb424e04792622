"""Squared-cosine noise schedule and reverse-step coefficients."""

from dataclasses import dataclass

import numpy as np

COSINE_OFFSET = 0.008
MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step arrays, index ``k - 1`` holds step ``k`` for ``k = 1..K``."""

    betas: np.ndarray
    alpha_bars: np.ndarray
    alphas: np.ndarray    # reverse-step scale 1/sqrt(1 - beta)
    gammas: np.ndarray    # noise-prediction weight beta/sqrt(1 - alpha_bar)
    sigmas: np.ndarray

    @property
    def K(self):
        return len(self.betas)

    def coefficients(self, k):
        i = k - 1
        return self.alphas[i], self.gammas[i], self.sigmas[i]

    def to_dict(self):
        return {"K": self.K, "offset": COSINE_OFFSET, "max_beta": MAX_BETA}


def _cosine_alpha_bar(t, s):
    return np.cos((t + s) / (1 + s) * np.pi / 2) ** 2


def make_schedule(K, s=COSINE_OFFSET, max_beta=MAX_BETA):
    if K < 1:
        raise ValueError("K must be >= 1")
    t = np.arange(K + 1) / K
    f = _cosine_alpha_bar(t, s)
    betas = np.clip(1.0 - f[1:] / f[:-1], 0.0, max_beta)
    alpha_bars = np.cumprod(1.0 - betas)
    prev = np.concatenate([[1.0], alpha_bars[:-1]])
    alphas = 1.0 / np.sqrt(1.0 - betas)
    gammas = betas / np.sqrt(1.0 - alpha_bars)
    var = betas * (1.0 - prev) / (1.0 - alpha_bars)
    sigmas = np.sqrt(var)
    sigmas[0] = 0.0
    return NoiseSchedule(betas, alpha_bars, alphas, gammas, sigmas)
