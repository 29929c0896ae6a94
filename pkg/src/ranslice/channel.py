"""Discrete Rayleigh-fading channel model.

Rayleigh amplitude fading means the power gain |g|^2 is exponentially
distributed.  The continuous distribution is discretized into K
equiprobable bins whose representatives are the conditional bin means, so
the alphabet preserves the configured mean gain exactly and sampling a
level reduces to a uniform draw over K indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FadingAlphabet:
    """K representative power gains with their probability mass."""

    levels: tuple                          # linear |g|^2 values, increasing
    probabilities: tuple                   # sums to 1
    mean: float

    def as_arrays(self):
        return np.asarray(self.levels), np.asarray(self.probabilities)


def build_alphabet(mean, num_levels):
    """Equiprobable-bin discretization of an exponential power gain.

    Bin k covers the [k/K, (k+1)/K) quantile range; its representative is
    E[X | X in bin].  For Exp(mean) the partial first moment over [a, b]
    is (a + mean) e^{-a/mean} - (b + mean) e^{-b/mean}, so the top bin's
    representative is quantile + mean by memorylessness.
    """
    if mean <= 0:
        raise ValueError("mean must be positive")
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    k = num_levels
    edges = [-mean * math.log(1.0 - j / k) for j in range(k)] + [math.inf]
    levels = []
    for a, b in zip(edges[:-1], edges[1:]):
        lower = (a + mean) * math.exp(-a / mean)
        upper = 0.0 if math.isinf(b) else (b + mean) * math.exp(-b / mean)
        levels.append(k * (lower - upper))
    probs = tuple(1.0 / k for _ in range(k))
    return FadingAlphabet(levels=tuple(levels), probabilities=probs, mean=mean)


def sample_channel(alphabet, num_ues, num_subchannels, rng):
    """Fresh i.i.d. level indices for every (UE, subchannel) pair."""
    k = len(alphabet.levels)
    # equiprobable bins: a uniform index draw realizes the pmf exactly
    return rng.integers(0, k, size=(num_ues, num_subchannels), dtype=np.int64)


def path_loss(distance, reference_gain, exponent):
    """Linear gain A * d^(-alpha); distance in meters, > 0."""
    if distance <= 0:
        raise ValueError("distance must be positive")
    return reference_gain * distance ** (-exponent)


def transmit_power(baseline_power, reference_gain, distance, exponent, fpc):
    """Fractional power control: baseline * (path loss)^(-fpc), watts."""
    if not 0.0 < fpc <= 1.0:
        raise ValueError("fpc must lie in (0, 1]")
    return baseline_power * path_loss(distance, reference_gain, exponent) ** (-fpc)


def subchannel_rate(power, gain, noise, bandwidth):
    """Shannon rate B log2(1 + power * gain / noise) in bits/second.

    gain is the full channel power gain |h|^2, i.e. fading level times
    path loss.
    """
    if noise <= 0:
        raise ValueError("noise must be positive")
    return bandwidth * math.log2(1.0 + power * gain / noise)
