"""Gaussian privatization of client rewards and the matching confidence constants.

Noise comes from numpy's ``Generator.normal`` (PCG64 bit generator, seeded
per client and phase) so that simulated runs are reproducible.  A real
deployment must draw from an unpredictable entropy source instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class PrivacyError(ValueError):
    pass


def dp_sigma(epsilon: float, delta_dp: float) -> float:
    """Gaussian-mechanism variance ``2 ln(1.25/delta) / epsilon**2``.

    ``epsilon = inf`` is accepted and gives zero variance.
    """
    if not epsilon > 0:
        raise PrivacyError(f"epsilon must be > 0, got {epsilon}")
    if not 0 < delta_dp < 1.25:
        raise PrivacyError(f"delta_dp must lie in (0, 1.25), got {delta_dp}")
    return 2.0 * math.log(1.25 / delta_dp) / epsilon**2


def dp_constants(sigma2: float, M: int) -> tuple[float, float]:
    """Confidence constants ``(c, c1) = (sqrt(4 + 16 sigma2), (2M)**(1/8))``."""
    if sigma2 < 0:
        raise PrivacyError("sigma2 must be >= 0")
    if M < 1:
        raise PrivacyError("M must be >= 1")
    return math.sqrt(4.0 + 16.0 * sigma2), (2.0 * M) ** 0.125


@dataclass(frozen=True)
class DpConfig:
    epsilon: float = 1.0
    delta_dp: float = 0.05

    def __post_init__(self):
        if not 0 < self.delta_dp < 1:
            raise PrivacyError(f"delta_dp must lie in (0, 1), got {self.delta_dp}")
        dp_sigma(self.epsilon, self.delta_dp)

    @property
    def sigma2(self) -> float:
        return dp_sigma(self.epsilon, self.delta_dp)


def privatize_rewards(rewards, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Add independent ``N(0, sigma2)`` noise to each reward; no clipping."""
    if sigma2 < 0:
        raise PrivacyError("sigma2 must be >= 0")
    rewards = np.asarray(rewards, dtype=float)
    return rewards + rng.normal(0.0, math.sqrt(sigma2), rewards.shape)
