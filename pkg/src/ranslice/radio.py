"""Per-scenario precomputed link quantities.

Configs are immutable, so everything derived from one (fading alphabet,
per-UE path loss, transmit powers, SNR coefficients, integer energy costs)
is computed once and cached.  SNR on a subchannel factors as
coefficient(ue, fpc) * fading_level, which keeps rate lookups cheap inside
solvers and the slot loop.
"""

from __future__ import annotations

import functools
import math

import numpy as np

from . import channel as ch
from . import dynamics as dyn


class RadioModel:
    """Arrays indexed by flat UE order (slices concatenated) and fpc index."""

    def __init__(self, config):
        self.config = config
        ran = config.ran
        self.alphabet = ch.build_alphabet(ran.fading_mean, ran.fading_levels)
        self.levels = np.asarray(self.alphabet.levels)
        self.level_probs = np.asarray(self.alphabet.probabilities)
        self.fpc_actions = np.asarray(ran.fpc_actions)

        ue_slices = config.ue_slices()
        self.ue_slice = np.asarray(ue_slices, dtype=np.int64)
        self.num_ues = len(ue_slices)
        self.num_slices = config.num_slices

        dist = np.asarray(config.ue_distances())
        self.path_loss = ran.reference_gain * dist ** (-ran.path_loss_exponent)

        slices = config.slices
        self.weight = np.asarray([slices[m].weight for m in ue_slices])
        self.packet_size = np.asarray([slices[m].packet_size for m in ue_slices])
        self.arrival_rate = np.asarray(
            [slices[m].packet_arrival_rate for m in ue_slices]
        )
        self.buffer_cap = np.asarray(
            [slices[m].buffer_capacity for m in ue_slices], dtype=np.int64
        )
        self.battery_cap = np.asarray(
            [slices[m].battery_capacity for m in ue_slices], dtype=np.int64
        )
        self.energy_unit = np.asarray([slices[m].energy_unit for m in ue_slices])

        # power[u, f] and the SNR multiplier of a fading level
        self.power = np.empty((self.num_ues, len(self.fpc_actions)))
        for u, m in enumerate(ue_slices):
            for f, phi in enumerate(ran.fpc_actions):
                self.power[u, f] = slices[m].baseline_power * self.path_loss[u] ** (-phi)
        self.snr_coeff = self.power * self.path_loss[:, None] / ran.noise_power
        self.cost_units = np.ceil(
            self.power * ran.slot_duration / self.energy_unit[:, None]
        ).astype(np.int64)

        # delay surrogate seconds contributed per queued packet
        self.surrogate_per_packet = np.where(
            self.arrival_rate > 0, ran.slot_duration / np.maximum(self.arrival_rate, 1e-300), np.inf
        )

    # -- rate helpers ------------------------------------------------------

    def rate_table(self):
        """bits/s for every (ue, fpc, level) triple on one subchannel."""
        ran = self.config.ran
        snr = self.snr_coeff[:, :, None] * self.levels[None, None, :]
        return ran.bandwidth_per_subchannel * np.log2(1.0 + snr)

    def fpc_index(self, phi):
        idx = int(np.argmin(np.abs(self.fpc_actions - phi)))
        if not math.isclose(self.fpc_actions[idx], phi, rel_tol=1e-12, abs_tol=0.0):
            raise ValueError(f"{phi} is not a configured fpc action")
        return idx

    # -- per-UE arrival distributions ---------------------------------------

    @functools.cached_property
    def packet_pmfs(self):
        return [
            dyn.packet_arrival_pmf(self.config.slices[m]) for m in self.ue_slice
        ]

    @functools.cached_property
    def energy_pmfs(self):
        return [
            dyn.energy_arrival_pmf(self.config.slices[m]) for m in self.ue_slice
        ]


@functools.lru_cache(maxsize=32)
def radio_model(config):
    """Cached RadioModel; configs are frozen and hashable."""
    return RadioModel(config)
