"""Per-slot queue and battery evolution, arrivals, and derived metrics.

Arrivals are truncated at the relevant capacity with the tail mass lumped
onto the top value so every transition kernel row stays stochastic over
the finite state space.  Queue and battery updates share the same clipped
form next = min(max(current + in - out, 0), capacity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import InfiniteDelayError, UndefinedMetricError


@dataclass(frozen=True)
class ArrivalSample:
    """Packets and energy units arriving at one UE in one slot."""

    packets: int
    energy_units: int


def truncated_poisson_pmf(rate, cap):
    """pmf over {0..cap} of a Poisson(rate) with the tail lumped onto cap."""
    pmf = np.zeros(cap + 1)
    if rate == 0.0:
        pmf[0] = 1.0
        return pmf
    pmf[:cap] = stats.poisson.pmf(np.arange(cap), rate)
    pmf[cap] = max(0.0, 1.0 - pmf[:cap].sum())
    return pmf


def packet_arrival_pmf(slice_cfg):
    """Bernoulli task gate composed with the truncated Poisson count."""
    pmf = slice_cfg.task_probability * truncated_poisson_pmf(
        slice_cfg.packet_arrival_rate, slice_cfg.buffer_capacity
    )
    pmf[0] += 1.0 - slice_cfg.task_probability
    return pmf


def energy_arrival_pmf(slice_cfg):
    return truncated_poisson_pmf(
        slice_cfg.energy_arrival_rate, slice_cfg.battery_capacity
    )


def sample_arrivals(slice_cfg, rng):
    """One slot of packet and energy arrivals for a UE of the given slice."""
    packets = 0
    if slice_cfg.task_probability > 0 and rng.random() < slice_cfg.task_probability:
        packets = min(
            int(rng.poisson(slice_cfg.packet_arrival_rate)),
            slice_cfg.buffer_capacity,
        )
    energy = min(
        int(rng.poisson(slice_cfg.energy_arrival_rate)),
        slice_cfg.battery_capacity,
    )
    return ArrivalSample(packets=packets, energy_units=energy)


def step_queue(queue, arrived, served, capacity):
    """min(max(q + a - l, 0), capacity)."""
    return min(max(queue + arrived - served, 0), capacity)


def step_energy(energy, harvested, consumed, capacity):
    """min(max(e + a - l, 0), capacity)."""
    return min(max(energy + harvested - consumed, 0), capacity)


def energy_feasible(energy_units, power, queue, rate, slice_cfg, slot_duration):
    """Battery check gating a transmission.

    The stored energy must strictly exceed the cheaper of emptying the
    queue (power * queue_bits / rate) and transmitting for the whole slot
    (power * slot).  A zero rate makes the first branch infinite.
    """
    if rate > 0.0:
        drain_queue = power * (queue * slice_cfg.packet_size) / rate
        required = min(drain_queue, power * slot_duration)
    else:
        required = power * slot_duration
    return energy_units * slice_cfg.energy_unit > required


def effective_rate(raw_rate, feasible):
    """The transmission rate actually credited: zero when gated off."""
    return raw_rate if feasible else 0.0


def service_packets(rate, slot_duration, packet_size):
    """Whole packets served in one slot at the given effective rate."""
    return int(math.floor(rate * slot_duration / packet_size))


def consumption_units(power, slot_duration, energy_unit):
    """Battery units burned by one slot of transmission at the given power."""
    return int(math.ceil(power * slot_duration / energy_unit))


def drop_probability(avg_rate, slot_duration, slice_cfg):
    """1 - (packets servable per slot) / (mean packets offered per slot).

    The raw expression goes negative when capacity exceeds arrivals; it is
    clamped to [0, 1] since the stable regime is the intended domain.
    """
    if slice_cfg.packet_arrival_rate <= 0:
        raise UndefinedMetricError("drop probability undefined: packet_arrival_rate is 0")
    served_per_slot = avg_rate * slot_duration / slice_cfg.packet_size
    raw = 1.0 - served_per_slot / slice_cfg.packet_arrival_rate
    return min(max(raw, 0.0), 1.0)


def average_delay(avg_queue, avg_rate, slot_duration, slice_cfg):
    """Mean queue length over mean per-slot service, in seconds.

    Little's law with the service rate as the effective throughput.  An
    empty queue has zero delay regardless of the rate.
    """
    if avg_queue == 0:
        return 0.0
    if avg_rate <= 0:
        raise InfiniteDelayError("average delay diverges: no service")
    served_per_slot = avg_rate * slot_duration / slice_cfg.packet_size
    return slot_duration * avg_queue / served_per_slot


def slice_delay(per_ue_delays):
    """Slice-level delay: the sum over the slice's UEs."""
    delays = list(per_ue_delays)
    if not delays:
        raise ValueError("per_ue_delays must be non-empty")
    return float(sum(delays))


def delay_surrogate(queue, slot_duration, slice_cfg):
    """Per-stage stand-in for a UE's delay: queue * slot / arrival_rate.

    Its long-run average matches the delay of the stable regime, which
    makes it usable as a per-stage constraint cost inside Bellman updates.
    """
    if slice_cfg.packet_arrival_rate <= 0:
        raise UndefinedMetricError("delay surrogate undefined: packet_arrival_rate is 0")
    return queue * slot_duration / slice_cfg.packet_arrival_rate
