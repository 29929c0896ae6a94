"""Distributed online estimation of the per-UE tables and dual prices.

Every slot the learner decides through its current tables, observes the
per-UE channel draws, arrivals and transition, and nudges both
subchannel-action entries of each UE's visited (queue, battery) row
toward sampled Bellman targets.  Updating the counterfactual entry
alongside the taken one costs nothing extra (the targets need only the
observed draws) and is what lets the tables escape the all-zero
initialization, where the greedy rule would otherwise never transmit.

Targets are normalized by re-evaluating the idle branch at a fixed
per-UE reference state (empty queue, full battery), the online analogue
of reference-state normalization in relative value iteration.  The
multipliers move on a slower step-size schedule driven by an exponential
moving average of the per-slice delay surrogate.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field

import numpy as np

from . import qfactor
from .config import ControlAction, Multipliers
from .errors import ConfigError
from .radio import radio_model

DELAY_EMA_WEIGHT = 0.02
REWARD_EMA_WEIGHT = 0.02
TERMINATION_WINDOW = 50


@dataclass
class LearnerState:
    """Mutable learner: tables, multipliers, slot counter and estimators."""

    config: object
    schedule: object
    store: qfactor.QFactorStore
    multipliers: Multipliers
    slot: int = 0
    reference: list = field(default_factory=list)
    last_q_delta: float = 0.0
    last_lm_delta: float = 0.0
    delay_avg: np.ndarray = None         # per-slice EMA of the delay surrogate
    reward_avg: float = 0.0              # EMA of the weighted-sum rate
    _delay_weight: float = 0.0           # bias-correction mass of delay_avg
    _reward_weight: float = 0.0          # bias-correction mass of reward_avg

    @property
    def delay_estimate(self):
        """Bias-corrected per-slice delay surrogate average."""
        if self._delay_weight == 0.0:
            return self.delay_avg
        return self.delay_avg / self._delay_weight

    @property
    def reward_estimate(self):
        """Bias-corrected weighted-sum-rate average."""
        if self._reward_weight == 0.0:
            return self.reward_avg
        return self.reward_avg / self._reward_weight


def init(config, schedule=None):
    """Fresh learner: zero tables, multipliers at the floor, slot 0."""
    schedule = schedule or config.schedule
    model = radio_model(config)
    store = qfactor.QFactorStore.zeros(config)
    multipliers = Multipliers.zeros(
        config.num_slices, schedule.lm_floor, schedule.lm_ceiling
    )
    reference = [
        (0, int(model.battery_cap[u])) for u in range(model.num_ues)
    ]
    return LearnerState(
        config=config,
        schedule=schedule,
        store=store,
        multipliers=multipliers,
        slot=0,
        reference=reference,
        delay_avg=np.zeros(config.num_slices),
    )


def decide(state, learner):
    """Allocation then power control with the learner's current tables."""
    return qfactor.decide(
        learner.store, state, learner.multipliers, learner.config
    )


def update_q(learner, record):
    """Apply one slot of table updates; returns the largest change.

    record carries the pre-transition state, the per-UE channel draws and
    the sampled arrivals.  Both the idle and hold entries of each UE's
    visited (queue, battery) row move toward their sampled targets minus
    the shared reference target.
    """
    config = learner.config
    model = radio_model(config)
    eps = learner.schedule.q_step(learner.slot)
    if eps == 0.0:
        return 0.0
    max_delta = 0.0
    for u in range(model.num_ues):
        table = learner.store.tables[u]
        q = int(record.queues_before[u])
        e = int(record.batteries_before[u])
        draws = model.levels[record.channel[u]]
        u_idle, u_hold, u_ref = qfactor.ue_update_targets(
            config,
            learner.store,
            u,
            q,
            e,
            draws,
            learner.multipliers,
            int(record.arrivals_q[u]),
            int(record.arrivals_e[u]),
        )
        d0 = eps * (u_idle - u_ref - table[q, e, 0])
        d1 = eps * (u_hold - u_ref - table[q, e, 1])
        table[q, e, 0] += d0
        table[q, e, 1] += d1
        ref_q, ref_e = learner.reference[u]
        theta_sample = u_ref - table[ref_q, ref_e, 0]
        learner.store.offsets[u] += eps * (theta_sample - learner.store.offsets[u])
        max_delta = max(max_delta, abs(d0), abs(d1))
    learner.last_q_delta = max_delta
    return max_delta


def update_lm(learner, delay_estimates):
    """Projected dual ascent on the per-slice delay constraint residuals."""
    step = learner.schedule.lm_step(learner.slot)
    max_delays = np.asarray([sl.max_delay for sl in learner.config.slices])
    before = learner.multipliers.values.copy()
    learner.multipliers.values += step * (np.asarray(delay_estimates) - max_delays)
    learner.multipliers.clamp()
    learner.last_lm_delta = float(np.abs(learner.multipliers.values - before).max())
    return learner.last_lm_delta


@dataclass
class OnlineRunResult:
    learner: LearnerState
    trace: list                       # one dict per iteration
    stopped: str                      # "converged" or "budget"


def run_online(env, learner, max_iterations=None, window=TERMINATION_WINDOW):
    """Decide / step / update loop with windowed termination.

    Stops once every table change and multiplier change over the last
    `window` slots is below the schedule tolerances, or when the iteration
    budget runs out (a normal outcome, flagged in the result).
    """
    schedule = learner.schedule
    if not schedule.is_two_timescale():
        raise ConfigError(
            "multiplier step decay must exceed the table step decay"
        )
    config = learner.config
    model = radio_model(config)
    budget = schedule.max_iterations if max_iterations is None else max_iterations
    q_window = collections.deque(maxlen=window)
    lm_window = collections.deque(maxlen=window)
    trace = []
    stopped = "budget"
    for _ in range(budget):
        state = env.begin_slot()
        action = decide(state, learner)
        record = env.complete_slot(action)

        q_delta = update_q(learner, record)
        surrogate = np.zeros(config.num_slices)
        for u in range(model.num_ues):
            m = int(model.ue_slice[u])
            surrogate[m] += (
                record.queues_before[u] * model.surrogate_per_packet[u]
            )
        learner.delay_avg += DELAY_EMA_WEIGHT * (surrogate - learner.delay_avg)
        learner._delay_weight += DELAY_EMA_WEIGHT * (1.0 - learner._delay_weight)
        lm_delta = update_lm(learner, learner.delay_estimate)
        learner.reward_avg += REWARD_EMA_WEIGHT * (
            record.weighted_sum_rate - learner.reward_avg
        )
        learner._reward_weight += REWARD_EMA_WEIGHT * (1.0 - learner._reward_weight)

        trace.append(
            {
                "iteration": learner.slot,
                "reward_estimate": learner.reward_estimate,
                **{
                    f"eta_{m}": float(learner.multipliers.values[m])
                    for m in range(config.num_slices)
                },
                "max_q_delta": q_delta,
            }
        )
        learner.slot += 1
        q_window.append(q_delta)
        lm_window.append(lm_delta)
        if (
            len(q_window) == window
            and max(q_window) < schedule.q_tolerance
            and max(lm_window) < schedule.lm_tolerance
        ):
            stopped = "converged"
            break
    return OnlineRunResult(learner=learner, trace=trace, stopped=stopped)


# -- checkpointing ---------------------------------------------------------


def save_checkpoint(learner, path):
    """Slot counter, multipliers and estimators, then the store layout."""
    with open(path, "w") as fh:
        fh.write(f"QFCKPT 1 {learner.slot}\n")
        eta = learner.multipliers
        values = " ".join(repr(float(v)) for v in eta.values)
        fh.write(f"ETA {eta.floor!r} {eta.ceiling!r} {values}\n")
        delays = " ".join(repr(float(v)) for v in learner.delay_avg)
        fh.write(f"DELAY {learner._delay_weight!r} {delays}\n")
        fh.write(f"REWARD {learner._reward_weight!r} {learner.reward_avg!r}\n")
        qfactor.save_store(learner.store, fh)


def load_checkpoint(path, config, schedule=None):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "QFCKPT" or header[1] != "1":
            raise ConfigError("not a version-1 QFCKPT file")
        slot = int(header[2])
        eta_line = fh.readline().split()
        if eta_line[0] != "ETA":
            raise ConfigError("malformed checkpoint: missing ETA line")
        floor, ceiling = float(eta_line[1]), float(eta_line[2])
        values = np.asarray([float(v) for v in eta_line[3:]])
        delay_line = fh.readline().split()
        if delay_line[0] != "DELAY":
            raise ConfigError("malformed checkpoint: missing DELAY line")
        delay_weight = float(delay_line[1])
        delay_avg = np.asarray([float(v) for v in delay_line[2:]])
        reward_line = fh.readline().split()
        if reward_line[0] != "REWARD":
            raise ConfigError("malformed checkpoint: missing REWARD line")
        reward_weight, reward_avg = float(reward_line[1]), float(reward_line[2])
        store = qfactor.load_store(fh, config)
    learner = init(config, schedule)
    learner.store = store
    learner.multipliers = Multipliers(values=values, floor=floor, ceiling=ceiling)
    learner.slot = slot
    learner.delay_avg = delay_avg
    learner.reward_avg = reward_avg
    learner._delay_weight = delay_weight
    learner._reward_weight = reward_weight
    return learner
