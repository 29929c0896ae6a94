"""Episode runner, experiment sweeps, metric aggregation, and seeding.

A master seed derives independent named streams (channel, arrivals,
policy, training) so that comparing policies at the same master seed uses
common random numbers for the environment while each policy keeps its own
decision randomness.  Sweeps fan out over parameter values and seeds and
emit plot-ready CSV tables plus a manifest recording the config hash and
seeds; set RANSLICE_WORKERS to parallelize sweep points across processes.
"""

from __future__ import annotations

import collections
import csv
import dataclasses
import hashlib
import json
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import baselines, dynamics, exact, learning, qfactor
from .config import ControlAction, Multipliers, SystemState
from .errors import CapExceededError, InfiniteDelayError
from .radio import radio_model

DEFAULT_HORIZON = 100_000
DEFAULT_WARMUP_FRACTION = 0.1
DEFAULT_TRAIN_SLOTS = 3000
POLICY_NAMES = ("proposed", "qsi", "random", "oracle")


def derive_rng(master_seed, *labels):
    """Deterministic named substream of a master seed."""
    key = tuple(zlib.crc32(str(label).encode()) for label in labels)
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


# -- metrics -----------------------------------------------------------------


@dataclass
class EpisodeMetrics:
    """Time-averaged results of one simulated episode."""

    weighted_sum_rate: float             # bits/s
    per_slice_rate: np.ndarray           # bits/s
    per_slice_drop: np.ndarray           # in [0, 1]
    per_slice_delay: np.ndarray          # seconds (may be inf)
    constraint_violations: np.ndarray    # True where delay exceeds the budget
    slots: int

    def validate(self):
        if self.slots <= 0:
            raise ValueError("slots must be positive")
        if np.any(self.per_slice_rate < 0) or self.weighted_sum_rate < 0:
            raise ValueError("rates must be nonnegative")
        if np.any((self.per_slice_drop < 0) | (self.per_slice_drop > 1)):
            raise ValueError("drop probabilities must lie in [0, 1]")


@dataclass
class SlotRecord:
    """Everything observed in one slot, for learners and metric collectors."""

    channel: np.ndarray                  # (U, N) level indices
    queues_before: np.ndarray
    batteries_before: np.ndarray
    assignment: np.ndarray
    fpc: np.ndarray
    raw_rate: np.ndarray                 # (U,) bits/s before the gate
    feasible: np.ndarray                 # (U,) bool
    effective_rate: np.ndarray           # (U,) bits/s
    served: np.ndarray                   # (U,) packets
    consumed: np.ndarray                 # (U,) energy units
    arrivals_q: np.ndarray
    arrivals_e: np.ndarray
    overflow: np.ndarray                 # (U,) packets lost to a full buffer
    queues_after: np.ndarray
    batteries_after: np.ndarray
    per_slice_rate: np.ndarray
    weighted_sum_rate: float


class Environment:
    """Slot-stepped simulator: sample channel, apply action, evolve state."""

    def __init__(self, config, channel_rng, arrival_rng, initial_state=None):
        self.config = config
        self.model = radio_model(config)
        self.channel_rng = channel_rng
        self.arrival_rng = arrival_rng
        if initial_state is None:
            initial_state = SystemState(
                channel=np.zeros(
                    (self.model.num_ues, config.ran.num_subchannels), dtype=np.int64
                ),
                queues=np.zeros(self.model.num_ues, dtype=np.int64),
                batteries=self.model.battery_cap.copy(),
            )
        self.queues = initial_state.queues.copy()
        self.batteries = initial_state.batteries.copy()
        self._pending_channel = None
        self.slot = 0

    def begin_slot(self):
        """Sample this slot's channel and expose the decision state."""
        if self._pending_channel is None:
            k = self.config.ran.fading_levels
            self._pending_channel = self.channel_rng.integers(
                0,
                k,
                size=(self.model.num_ues, self.config.ran.num_subchannels),
                dtype=np.int64,
            )
        return SystemState(
            channel=self._pending_channel,
            queues=self.queues.copy(),
            batteries=self.batteries.copy(),
        )

    def complete_slot(self, action):
        """Gate, serve, sample arrivals, and step queues and batteries."""
        if self._pending_channel is None:
            raise RuntimeError("begin_slot must run before complete_slot")
        model = self.model
        ran = self.config.ran
        channel = self._pending_channel
        assignment = action.assignment
        fpc_idx = np.searchsorted(model.fpc_actions, action.fpc)
        fpc_idx = np.clip(fpc_idx, 0, len(model.fpc_actions) - 1)

        levels = model.levels[channel]
        coeff = model.snr_coeff[np.arange(model.num_ues), fpc_idx]
        per_sub = ran.bandwidth_per_subchannel * np.log2(
            1.0 + coeff[:, None] * levels
        )
        raw = (per_sub * assignment).sum(axis=1)
        transmitting = assignment.any(axis=1)
        power = model.power[np.arange(model.num_ues), fpc_idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            drain_queue = np.where(
                raw > 0.0,
                power * self.queues * model.packet_size / np.maximum(raw, 1e-300),
                np.inf,
            )
        required = np.minimum(drain_queue, power * ran.slot_duration)
        feasible = transmitting & (
            self.batteries * model.energy_unit > required
        )
        eff = np.where(feasible, raw, 0.0)
        served = np.floor(
            eff * ran.slot_duration / model.packet_size
        ).astype(np.int64)
        consumed = np.where(
            feasible, model.cost_units[np.arange(model.num_ues), fpc_idx], 0
        )

        task = self.arrival_rng.random(model.num_ues) < np.asarray(
            [self.config.slices[m].task_probability for m in model.ue_slice]
        )
        aq = np.minimum(
            self.arrival_rng.poisson(model.arrival_rate) * task, model.buffer_cap
        ).astype(np.int64)
        lam_e = np.asarray(
            [self.config.slices[m].energy_arrival_rate for m in model.ue_slice]
        )
        ae = np.minimum(
            self.arrival_rng.poisson(lam_e), model.battery_cap
        ).astype(np.int64)

        raw_next_q = np.maximum(self.queues + aq - served, 0)
        next_q = np.minimum(raw_next_q, model.buffer_cap)
        overflow = raw_next_q - next_q
        next_e = np.minimum(
            np.maximum(self.batteries + ae - consumed, 0), model.battery_cap
        )

        per_slice_rate = np.zeros(self.config.num_slices)
        np.add.at(per_slice_rate, model.ue_slice, eff)
        wsr = float((model.weight * eff).sum())

        record = SlotRecord(
            channel=channel,
            queues_before=self.queues.copy(),
            batteries_before=self.batteries.copy(),
            assignment=assignment.copy(),
            fpc=np.asarray(action.fpc).copy(),
            raw_rate=raw,
            feasible=feasible,
            effective_rate=eff,
            served=served,
            consumed=consumed.astype(np.int64),
            arrivals_q=aq,
            arrivals_e=ae,
            overflow=overflow,
            queues_after=next_q,
            batteries_after=next_e,
            per_slice_rate=per_slice_rate,
            weighted_sum_rate=wsr,
        )
        self.queues = next_q
        self.batteries = next_e
        self._pending_channel = None
        self.slot += 1
        return record


# -- episode running -----------------------------------------------------------


def run_episode(policy, config, seed, horizon=DEFAULT_HORIZON,
                warmup_fraction=DEFAULT_WARMUP_FRACTION, return_detail=False):
    """Simulate one seeded episode and return its time-averaged metrics.

    Metrics cover the slots after the warm-up fraction.  With
    return_detail=True also returns per-UE averages and the sojourn times
    (in slots) of packets served after warm-up, for verification work.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    model = radio_model(config)
    env = Environment(
        config,
        channel_rng=derive_rng(seed, "channel"),
        arrival_rng=derive_rng(seed, "arrivals"),
    )
    policy_rng = derive_rng(seed, "policy")
    warm = int(horizon * warmup_fraction)
    num_ues = model.num_ues

    sum_eff = np.zeros(num_ues)
    sum_queue = np.zeros(num_ues)
    arrived = np.zeros(num_ues)
    overflowed = np.zeros(num_ues)
    wsr_sum = 0.0
    counted = 0
    fifo = [collections.deque() for _ in range(num_ues)] if return_detail else None
    sojourns = [[] for _ in range(num_ues)] if return_detail else None

    for t in range(horizon):
        state = env.begin_slot()
        action = policy(state, t, policy_rng)
        record = env.complete_slot(action)
        if return_detail:
            _track_packets(record, fifo, sojourns, t, warm, model)
        if t < warm and horizon > 1:
            continue
        counted += 1
        sum_eff += record.effective_rate
        sum_queue += record.queues_before
        arrived += record.arrivals_q
        overflowed += record.overflow
        wsr_sum += record.weighted_sum_rate

    metrics = _aggregate_metrics(
        config, model, sum_eff, sum_queue, arrived, overflowed, wsr_sum, counted
    )
    if return_detail:
        detail = {
            "avg_rate_per_ue": sum_eff / counted,
            "avg_queue_per_ue": sum_queue / counted,
            "sojourn_slots": sojourns,
        }
        return metrics, detail
    return metrics


def _track_packets(record, fifo, sojourns, t, warm, model):
    """FIFO tagging mirroring min(max(q + a - l, 0), cap) semantics."""
    for u in range(model.num_ues):
        queue = fifo[u]
        queue.extend([t] * int(record.arrivals_q[u]))
        pool = int(record.queues_before[u] + record.arrivals_q[u])
        served = pool - int(max(record.queues_before[u] + record.arrivals_q[u]
                                - record.served[u], 0))
        for _ in range(served):
            born = queue.popleft()
            if t >= warm:
                sojourns[u].append(t - born)
        # overflow drops the newest arrivals
        for _ in range(int(record.overflow[u])):
            queue.pop()


def _aggregate_metrics(config, model, sum_eff, sum_queue, arrived, overflowed,
                       wsr_sum, counted):
    num_slices = config.num_slices
    per_slice_rate = np.zeros(num_slices)
    per_slice_drop = np.zeros(num_slices)
    per_slice_delay = np.zeros(num_slices)
    for m, sl in enumerate(config.slices):
        lo, hi = config.slice_ue_range(m)
        per_slice_rate[m] = sum_eff[lo:hi].sum() / counted
        arr = arrived[lo:hi].sum()
        per_slice_drop[m] = overflowed[lo:hi].sum() / arr if arr > 0 else 0.0
        delays = []
        for u in range(lo, hi):
            avg_q = sum_queue[u] / counted
            avg_r = sum_eff[u] / counted
            try:
                delays.append(
                    dynamics.average_delay(avg_q, avg_r, config.ran.slot_duration, sl)
                )
            except InfiniteDelayError:
                delays.append(math.inf)
        per_slice_delay[m] = dynamics.slice_delay(delays)
    max_delays = np.asarray([sl.max_delay for sl in config.slices])
    metrics = EpisodeMetrics(
        weighted_sum_rate=wsr_sum / counted,
        per_slice_rate=per_slice_rate,
        per_slice_drop=np.clip(per_slice_drop, 0.0, 1.0),
        per_slice_delay=per_slice_delay,
        constraint_violations=per_slice_delay > max_delays,
        slots=counted,
    )
    metrics.validate()
    return metrics


# -- policies --------------------------------------------------------------------


class LearnedPolicy:
    """Frozen tables driving the advantage allocation and power control."""

    name = "proposed"

    def __init__(self, store, multipliers, config):
        self.store = store
        self.multipliers = multipliers
        self.config = config

    def __call__(self, state, slot, rng):
        return qfactor.decide(self.store, state, self.multipliers, self.config)


class OraclePolicy:
    """Greedy policy of the exact solver, for cap-sized instances only."""

    name = "oracle"

    def __init__(self, solution):
        self.solution = solution

    def __call__(self, state, slot, rng):
        idx = self.solution.space.index_of(state)
        action = self.solution.kernel.actions[int(self.solution.table.greedy[idx])]
        return action.to_control_action(self.solution.space.config)


def train_proposed(config, seed, train_slots=DEFAULT_TRAIN_SLOTS, schedule=None):
    """Run the online learner on its own streams and freeze the result."""
    learner = learning.init(config, schedule)
    env = Environment(
        config,
        channel_rng=derive_rng(seed, "train", "channel"),
        arrival_rng=derive_rng(seed, "train", "arrivals"),
    )
    learning.run_online(env, learner, max_iterations=train_slots)
    return LearnedPolicy(learner.store, learner.multipliers, config)


def make_policy(name, config, seed, train_slots=DEFAULT_TRAIN_SLOTS, store=None,
                multipliers=None, schedule=None):
    """Instantiate a named policy; the proposed one trains unless given tables."""
    if name == "random":
        return baselines.RandomPolicy(config)
    if name == "qsi":
        return baselines.QsiPolicy(config)
    if name == "proposed":
        if store is not None:
            if multipliers is None:
                multipliers = Multipliers.zeros(config.num_slices)
            return LearnedPolicy(store, multipliers, config)
        return train_proposed(config, seed, train_slots, schedule)
    if name == "oracle":
        solution = exact.solve_instance(config)
        return OraclePolicy(solution)
    raise ValueError(
        f"unknown policy {name!r}; valid names: {', '.join(POLICY_NAMES)}"
    )


# -- sweeps ----------------------------------------------------------------------


_METRIC_COLUMNS = ("weighted_sum_rate", "per_slice_rate", "per_slice_drop",
                   "per_slice_delay")


def _metrics_to_row(config, metrics):
    row = {"weighted_sum_rate": metrics.weighted_sum_rate}
    for m, sl in enumerate(config.slices):
        tag = sl.name or f"slice{m}"
        row[f"rate_{tag}"] = float(metrics.per_slice_rate[m])
        row[f"drop_{tag}"] = float(metrics.per_slice_drop[m])
        row[f"delay_{tag}"] = float(metrics.per_slice_delay[m])
        row[f"violated_{tag}"] = bool(metrics.constraint_violations[m])
    return row


def _sweep_point(args):
    (config, param_name, param_value, policy_names, seed, horizon,
     train_slots) = args
    rows = []
    for name in policy_names:
        policy = make_policy(name, config, seed, train_slots=train_slots)
        metrics = run_episode(policy, config, seed, horizon=horizon)
        row = {
            "policy": name,
            param_name: param_value,
            "seed": seed,
            **_metrics_to_row(config, metrics),
        }
        rows.append(row)
    return rows


def _run_sweep(variants, param_name, policy_names, seeds, horizon, train_slots):
    tasks = [
        (config, param_name, value, tuple(policy_names), seed, horizon, train_slots)
        for value, config in variants
        for seed in seeds
    ]
    workers = int(os.environ.get("RANSLICE_WORKERS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_sweep_point, tasks))
    else:
        chunks = [_sweep_point(task) for task in tasks]
    rows = [row for chunk in chunks for row in chunk]
    means = _sweep_means(rows, param_name, policy_names)
    return rows, means


def _sweep_means(rows, param_name, policy_names):
    means = []
    keys = sorted({(r["policy"], r[param_name]) for r in rows},
                  key=lambda k: (policy_names.index(k[0]), k[1]))
    for policy, value in keys:
        group = [r for r in rows if r["policy"] == policy and r[param_name] == value]
        mean_row = {"policy": policy, param_name: value, "num_seeds": len(group)}
        for col in group[0]:
            if col in ("policy", param_name, "seed") or col.startswith("violated_"):
                continue
            values = [float(r[col]) for r in group]
            mean_row[col] = float(np.mean(values))
            mean_row[f"{col}_stderr"] = (
                float(np.std(values, ddof=1) / math.sqrt(len(values)))
                if len(values) > 1
                else 0.0
            )
        means.append(mean_row)
    return means


def sweep_subchannels(config, policy_names, n_values, seeds,
                      horizon=10_000, train_slots=DEFAULT_TRAIN_SLOTS):
    """Weighted-sum rate versus the number of subchannels."""
    variants = [
        (n, dataclasses.replace(
            config, ran=dataclasses.replace(config.ran, num_subchannels=int(n))
        ))
        for n in n_values
    ]
    return _run_sweep(variants, "num_subchannels", policy_names, seeds,
                      horizon, train_slots)


def sweep_battery(config, policy_names, battery_values, seeds,
                  horizon=10_000, train_slots=DEFAULT_TRAIN_SLOTS):
    """Per-slice rate versus battery capacity.

    battery_values give the capacity of slice 0; the other slices scale
    by their configured ratio to slice 0 (rounded, floor 1 unit).
    """
    base = config.slices[0].battery_capacity
    variants = []
    for value in battery_values:
        factor = value / base
        slices = tuple(
            dataclasses.replace(
                sl, battery_capacity=max(1, round(sl.battery_capacity * factor))
            )
            for sl in config.slices
        )
        variants.append((value, dataclasses.replace(config, slices=slices)))
    return _run_sweep(variants, "battery_capacity", policy_names, seeds,
                      horizon, train_slots)


def sweep_arrival(config, policy_names, rate_values, seeds,
                  horizon=10_000, train_slots=DEFAULT_TRAIN_SLOTS):
    """Per-slice dropping probability versus the packet arrival rate."""
    variants = []
    for value in rate_values:
        slices = tuple(
            dataclasses.replace(sl, packet_arrival_rate=float(value))
            for sl in config.slices
        )
        variants.append((value, dataclasses.replace(config, slices=slices)))
    return _run_sweep(variants, "packet_arrival_rate", policy_names, seeds,
                      horizon, train_slots)


def convergence_experiment(config, schedule=None, seeds=(0,), max_iterations=None):
    """Online-learning traces plus the exact average reward when it fits.

    Returns {"traces": {seed: rows}, "oracle_theta": float or None,
    "notice": str or None}; the oracle line is omitted with a notice when
    the instance exceeds the exact-solver cap.
    """
    traces = {}
    for seed in seeds:
        learner = learning.init(config, schedule)
        env = Environment(
            config,
            channel_rng=derive_rng(seed, "train", "channel"),
            arrival_rng=derive_rng(seed, "train", "arrivals"),
        )
        result = learning.run_online(env, learner, max_iterations=max_iterations)
        traces[seed] = result.trace
    oracle_theta, notice = None, None
    try:
        solution = exact.solve_instance(config)
        oracle_theta = solution.table.theta
    except CapExceededError as exc:
        notice = f"exact reference omitted: {exc}"
    return {"traces": traces, "oracle_theta": oracle_theta, "notice": notice}


# -- output ----------------------------------------------------------------------


def write_csv(path, rows, columns=None):
    if not rows:
        with open(path, "w", newline="") as fh:
            fh.write("")
        return
    if columns is None:
        columns = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def config_hash(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def write_manifest(path, payload):
    from . import __version__

    payload = dict(payload)
    payload["package_version"] = __version__
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
