"""Reference policies the learned scheme is compared against.

Both baselines transmit at the maximum power-control exponent and ignore
battery state; the energy gate downstream zeroes whatever they schedule
infeasibly, which is exactly their handicap.
"""

from __future__ import annotations

import numpy as np

from .config import ControlAction
from .radio import radio_model


def random_policy(state, config, rng, slot=0):
    """Equal-share split across slices, uniform UE choice inside a slice.

    Subchannels are partitioned into contiguous per-slice blocks as evenly
    as the count allows; when it does not divide evenly, the slices
    receiving the extra subchannel rotate round-robin with the slot index.
    Every UE transmits at the largest configured exponent.
    """
    model = radio_model(config)
    n_sub = config.ran.num_subchannels
    n_slices = config.num_slices
    base, extra = divmod(n_sub, n_slices)
    shares = [
        base + (1 if (m - slot) % n_slices < extra else 0)
        for m in range(n_slices)
    ]
    assignment = np.zeros((model.num_ues, n_sub), dtype=np.int64)
    sub = 0
    for m, share in enumerate(shares):
        lo, hi = config.slice_ue_range(m)
        for _ in range(share):
            ue = int(rng.integers(lo, hi))
            assignment[ue, sub] = 1
            sub += 1
    fpc = np.full(model.num_ues, model.fpc_actions[-1])
    return ControlAction(assignment=assignment, fpc=fpc)


def qsi_policy(state, config):
    """Weighted backlog-capped rate maximization from channel and queues.

    Each subchannel goes to the UE maximizing
    weight * min(queue_bits / slot, instantaneous rate at max power);
    empty queues score zero and leave the subchannel idle.  Battery state
    is ignored entirely.
    """
    model = radio_model(config)
    n_sub = config.ran.num_subchannels
    levels = model.levels[state.channel]                       # (U, N)
    rates = config.ran.bandwidth_per_subchannel * np.log2(
        1.0 + model.snr_coeff[:, -1][:, None] * levels
    )
    backlog_rate = state.queues * model.packet_size / config.ran.slot_duration
    scores = model.weight[:, None] * np.minimum(backlog_rate[:, None], rates)
    assignment = np.zeros((model.num_ues, n_sub), dtype=np.int64)
    for n in range(n_sub):
        winner = int(np.argmax(scores[:, n]))
        if scores[winner, n] > 0.0:
            assignment[winner, n] = 1
    fpc = np.full(model.num_ues, model.fpc_actions[-1])
    return ControlAction(assignment=assignment, fpc=fpc)


class RandomPolicy:
    """Stateful wrapper carrying the slot counter for the rotation rule."""

    name = "random"

    def __init__(self, config):
        self.config = config

    def __call__(self, state, slot, rng):
        return random_policy(state, self.config, rng, slot=slot)


class QsiPolicy:
    name = "qsi"

    def __init__(self, config):
        self.config = config

    def __call__(self, state, slot, rng):
        return qsi_policy(state, self.config)
