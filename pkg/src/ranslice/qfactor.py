"""Linear value decomposition onto per-UE per-subchannel tables.

Each UE carries one table Q[q, e, c] over its own queue length, battery
level and the binary hold/release of a single subchannel; subchannel
symmetry lets that one table serve every subchannel.  The global action
value of an assignment is the sum of table entries it selects, so the
subchannel allocation reduces to a per-subchannel advantage argmax and
power control to a local one-step lookahead per UE.

Each table models a single-subchannel world: its service, energy drain
and feasibility gate are computed as if the owned subchannel were the
UE's only one.  That keeps the tables, the online update targets and the
fixed-point diagnostic mutually consistent, and makes the representation
exact on one-UE, one-subchannel instances.

Store file format (text, versioned)::

    QFSTORE 1 <num_tables>
    TABLE <flat_ue> <nq> <ne> <offset>
    <nq * ne lines of "<value_c0> <value_c1>" in row-major (q, e) order>
    ... repeated per table ...
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ControlAction, Multipliers
from .errors import ConfigError
from .radio import radio_model


@dataclass
class QFactorStore:
    """Per-UE tables (buffer+1, battery+1, 2) plus average-reward offsets."""

    tables: list
    offsets: np.ndarray

    @classmethod
    def zeros(cls, config):
        model = radio_model(config)
        tables = [
            np.zeros((int(model.buffer_cap[u]) + 1, int(model.battery_cap[u]) + 1, 2))
            for u in range(model.num_ues)
        ]
        return cls(tables=tables, offsets=np.zeros(model.num_ues))

    def copy(self):
        return QFactorStore(
            tables=[t.copy() for t in self.tables], offsets=self.offsets.copy()
        )

    def validate(self, config):
        model = radio_model(config)
        if len(self.tables) != model.num_ues:
            raise ConfigError("store table count does not match the scenario")
        for u, table in enumerate(self.tables):
            expected = (int(model.buffer_cap[u]) + 1, int(model.battery_cap[u]) + 1, 2)
            if table.shape != expected:
                raise ConfigError(f"table {u} has shape {table.shape}, expected {expected}")
            if not np.all(np.isfinite(table)):
                raise ConfigError(f"table {u} contains non-finite entries")


# -- single-subchannel world -------------------------------------------------


class UeWorld:
    """Vectorized Bellman machinery of one UE's single-subchannel model."""

    def __init__(self, config, ue):
        model = radio_model(config)
        ran = config.ran
        self.config = config
        self.ue = ue
        self.slice_id = int(model.ue_slice[ue])
        sl = config.slices[self.slice_id]
        self.slice_cfg = sl
        self.nq = sl.buffer_capacity + 1
        self.ne = sl.battery_capacity + 1
        self.num_subchannels = ran.num_subchannels
        self.weight = sl.weight
        self.levels = model.levels
        self.level_probs = model.level_probs
        self.coeff = model.snr_coeff[ue]          # per fpc index
        self.power = model.power[ue]
        self.cost = model.cost_units[ue]
        self.bandwidth = ran.bandwidth_per_subchannel
        self.slot = ran.slot_duration
        self.packet_pmf = model.packet_pmfs[ue]
        self.energy_pmf = model.energy_pmfs[ue]
        self.reference = (0, sl.battery_capacity)
        # single-subchannel rate and service for every (fpc, level)
        self.rate = self.bandwidth * np.log2(
            1.0 + self.coeff[:, None] * self.levels[None, :]
        )
        self.service = np.floor(
            self.rate * self.slot / sl.packet_size
        ).astype(np.int64)
        self._push_q = {}
        self._push_e = {}
        self._feasible = {}

    # pushforward matrices: row q holds the pmf of clip(q - out + A)

    def push_q(self, served):
        if served not in self._push_q:
            mat = np.zeros((self.nq, self.nq))
            for q in range(self.nq):
                base = q - served
                for a, p in enumerate(self.packet_pmf):
                    mat[q, min(max(base + a, 0), self.nq - 1)] += p
            self._push_q[served] = mat
        return self._push_q[served]

    def push_e(self, consumed):
        if consumed not in self._push_e:
            mat = np.zeros((self.ne, self.ne))
            for e in range(self.ne):
                base = e - consumed
                for a, p in enumerate(self.energy_pmf):
                    mat[e, min(max(base + a, 0), self.ne - 1)] += p
            self._push_e[consumed] = mat
        return self._push_e[consumed]

    def feasible_grid(self, fpc_idx, level_idx):
        """(nq, ne) boolean battery-gate mask for one (fpc, level) pair."""
        key = (fpc_idx, level_idx)
        if key not in self._feasible:
            rate = self.rate[fpc_idx, level_idx]
            power = self.power[fpc_idx]
            sl = self.slice_cfg
            q = np.arange(self.nq)[:, None]
            e = np.arange(self.ne)[None, :]
            if rate > 0.0:
                required = np.minimum(
                    power * q * sl.packet_size / rate, power * self.slot
                )
            else:
                required = np.full((self.nq, 1), power * self.slot)
            self._feasible[key] = e * sl.energy_unit > required
        return self._feasible[key]

    def penalty_grid(self, eta_m):
        """Per-stage constraint cost, shared by both subchannel actions."""
        sl = self.slice_cfg
        surrogate = np.arange(self.nq) * self.slot / sl.packet_arrival_rate
        pen = -(eta_m / self.num_subchannels) * (
            surrogate - sl.max_delay / sl.num_ues
        )
        return np.repeat(pen[:, None], self.ne, axis=1)

    def continuation(self, next_values, served, consumed):
        """(nq, ne) expectation of next_values after service and arrivals."""
        return self.push_q(served) @ next_values @ self.push_e(consumed).T

    def bellman_apply(self, table, eta_m):
        """One exact backup of the single-subchannel fixed-point operator."""
        next_values = table.max(axis=2)
        idle_cont = self.continuation(next_values, 0, 0)
        pen = self.penalty_grid(eta_m)
        out = np.empty_like(table)
        out[:, :, 0] = pen + idle_cont
        hold = np.zeros((self.nq, self.ne))
        for level_idx, p in enumerate(self.level_probs):
            best = None
            for fpc_idx in range(len(self.coeff)):
                mask = self.feasible_grid(fpc_idx, level_idx)
                cont = self.continuation(
                    next_values,
                    int(self.service[fpc_idx, level_idx]),
                    int(self.cost[fpc_idx]),
                )
                value = (
                    self.weight * self.rate[fpc_idx, level_idx] * mask
                    + pen
                    + np.where(mask, cont, idle_cont)
                )
                best = value if best is None else np.maximum(best, value)
            hold += p * best
        out[:, :, 1] = hold
        return out


def ue_worlds(config):
    model = radio_model(config)
    return [UeWorld(config, u) for u in range(model.num_ues)]


def _eta_values(multipliers):
    if isinstance(multipliers, Multipliers):
        return np.asarray(multipliers.values, dtype=float)
    return np.asarray(multipliers, dtype=float)


# -- spec operations ----------------------------------------------------------


def global_q(store, state, assignment):
    """Sum of the table entries selected by a full assignment matrix."""
    total = 0.0
    for u, table in enumerate(store.tables):
        q, e = int(state.queues[u]), int(state.batteries[u])
        for c in assignment[u]:
            total += table[q, e, int(c)]
    return float(total)


def allocate_subchannels(store, state):
    """Advantage-argmax assignment, one winner per subchannel.

    The advantage of a UE is Q[q, e, 1] - Q[q, e, 0] from its own table;
    a subchannel goes to the UE with the largest strictly positive
    advantage, ties broken toward the lowest flat index, and stays idle
    when no advantage is positive.  The tables carry no per-subchannel
    structure, so the same winner takes every subchannel.
    """
    num_ues, num_subchannels = state.channel.shape
    advantage = np.empty(num_ues)
    for u, table in enumerate(store.tables):
        q, e = int(state.queues[u]), int(state.batteries[u])
        advantage[u] = table[q, e, 1] - table[q, e, 0]
    assignment = np.zeros((num_ues, num_subchannels), dtype=np.int64)
    winner = int(np.argmax(advantage))
    if advantage[winner] > 0.0:
        assignment[winner, :] = 1
    return assignment


def select_power(state, assignment, store, multipliers, config):
    """Per-UE one-step lookahead over the power-control actions.

    For each UE holding subchannels, every exponent is scored as the gated
    instantaneous reward at the current channel draw plus the expected
    next-state table value under the induced service and drain; the lowest
    index wins ties.  UEs without subchannels get the first action.
    """
    model = radio_model(config)
    worlds = _worlds_cache(config)
    eta = _eta_values(multipliers)
    fpc = np.full(model.num_ues, model.fpc_actions[0])
    for u in range(model.num_ues):
        owned = np.flatnonzero(assignment[u])
        if owned.size == 0:
            continue
        world = worlds[u]
        table = store.tables[u]
        q, e = int(state.queues[u]), int(state.batteries[u])
        eta_m = eta[world.slice_id]
        next_values = table.max(axis=2)
        levels = model.levels[state.channel[u, owned]]
        best_idx, best_value = 0, -math.inf
        for fpc_idx in range(len(model.fpc_actions)):
            raw = float(
                np.sum(world.bandwidth * np.log2(1.0 + world.coeff[fpc_idx] * levels))
            )
            power = world.power[fpc_idx]
            sl = world.slice_cfg
            if raw > 0.0:
                required = min(power * q * sl.packet_size / raw, power * world.slot)
            else:
                required = power * world.slot
            feasible = e * sl.energy_unit > required
            eff = raw if feasible else 0.0
            served = int(math.floor(eff * world.slot / sl.packet_size))
            consumed = int(world.cost[fpc_idx]) if feasible else 0
            cont = float(
                world.push_q(served)[q]
                @ next_values
                @ world.push_e(consumed)[e]
            ) * world.num_subchannels
            pen = -eta_m * (
                q * world.slot / sl.packet_arrival_rate - sl.max_delay / sl.num_ues
            )
            value = world.weight * eff + pen + cont
            if value > best_value:
                best_idx, best_value = fpc_idx, value
        fpc[u] = model.fpc_actions[best_idx]
    return fpc


def decide(store, state, multipliers, config):
    """Full decision: advantage allocation followed by local power control."""
    assignment = allocate_subchannels(store, state)
    fpc = select_power(state, assignment, store, multipliers, config)
    return ControlAction(assignment=assignment, fpc=fpc)


def per_stage_ue_reward(multipliers, ue, queue, battery, c, phi, channel_draw,
                        config, feasible=None):
    """Sampled per-UE per-subchannel reward at one channel draw.

    channel_draw is the fading power gain on the subchannel.  When
    feasible is not given, the battery gate is evaluated locally with the
    single-subchannel rate.
    """
    model = radio_model(config)
    world = _worlds_cache(config)[ue]
    eta_m = _eta_values(multipliers)[world.slice_id]
    sl = world.slice_cfg
    pen = -(eta_m / world.num_subchannels) * (
        queue * world.slot / sl.packet_arrival_rate - sl.max_delay / sl.num_ues
    )
    if not c:
        return float(pen)
    fpc_idx = model.fpc_index(phi)
    raw = world.bandwidth * math.log2(1.0 + world.coeff[fpc_idx] * channel_draw)
    if feasible is None:
        power = world.power[fpc_idx]
        if raw > 0.0:
            required = min(power * queue * sl.packet_size / raw, power * world.slot)
        else:
            required = power * world.slot
        feasible = battery * sl.energy_unit > required
    eff = raw if feasible else 0.0
    return float(world.weight * eff + pen)


# -- exact per-UE dynamic programming -----------------------------------------


def solve_ue_table(config, ue, eta_m, tol=1e-10, max_iter=200_000):
    """Relative value iteration on one UE's single-subchannel world.

    Returns (table, theta) with the table normalized to 0 at the reference
    entry (empty queue, full battery, idle).
    """
    world = _worlds_cache(config)[ue]
    table = np.zeros((world.nq, world.ne, 2))
    ref = world.reference
    theta = 0.0
    for _ in range(max_iter):
        applied = world.bellman_apply(table, eta_m)
        theta = float(applied[ref[0], ref[1], 0])
        new_table = applied - theta
        delta = float(np.abs(new_table - table).max())
        table = new_table
        # accept the float rounding floor of this value scale as converged
        floor = 64.0 * np.finfo(float).eps * max(1.0, float(np.abs(applied).max()))
        if delta < max(tol, floor):
            return table, theta
    raise RuntimeError(
        f"per-UE value iteration did not reach {tol:.1e} (last delta {delta:.3e})"
    )


def fixed_point_residual(store, config, multipliers):
    """Per-UE residual grids of the decomposed fixed-point equation.

    residual = T(table) - offset - table, evaluated exactly over the
    channel prior and arrival distributions.  Zero everywhere iff the
    store solves its per-UE equations with the stored offsets.
    """
    worlds = _worlds_cache(config)
    eta = _eta_values(multipliers)
    residuals = []
    for u, world in enumerate(worlds):
        applied = world.bellman_apply(store.tables[u], eta[world.slice_id])
        residuals.append(applied - store.offsets[u] - store.tables[u])
    return residuals


def ue_update_targets(config, store, ue, queue, battery, level_draws, eta,
                      packets_arrived, energy_arrived, feasible_hint=None):
    """Sampled Bellman targets (idle, hold, reference) for one UE and slot.

    level_draws holds the fading gains observed on each subchannel this
    slot; the hold target averages the per-subchannel samples, each
    evaluated with its own greedy exponent in the single-subchannel world.
    The reference target re-evaluates the idle branch at the anchor state
    with the same arrival draws.
    """
    world = _worlds_cache(config)[ue]
    table = store.tables[ue]
    eta_m = _eta_values(eta)[world.slice_id]
    sl = world.slice_cfg
    next_values = table.max(axis=2)

    def pen(q):
        return -(eta_m / world.num_subchannels) * (
            q * world.slot / sl.packet_arrival_rate - sl.max_delay / sl.num_ues
        )

    def idle_target(q, e):
        q_next = min(max(q + packets_arrived, 0), world.nq - 1)
        e_next = min(max(e + energy_arrived, 0), world.ne - 1)
        return pen(q) + next_values[q_next, e_next]

    u_idle = idle_target(queue, battery)
    u_ref = idle_target(*world.reference)

    hold_samples = []
    for draw in np.atleast_1d(level_draws):
        best = -math.inf
        for fpc_idx in range(len(world.coeff)):
            raw = world.bandwidth * math.log2(1.0 + world.coeff[fpc_idx] * draw)
            power = world.power[fpc_idx]
            if feasible_hint is None:
                if raw > 0.0:
                    required = min(
                        power * queue * sl.packet_size / raw, power * world.slot
                    )
                else:
                    required = power * world.slot
                feasible = battery * sl.energy_unit > required
            else:
                feasible = feasible_hint
            eff = raw if feasible else 0.0
            served = int(math.floor(eff * world.slot / sl.packet_size))
            consumed = int(world.cost[fpc_idx]) if feasible else 0
            q_next = min(max(queue - served + packets_arrived, 0), world.nq - 1)
            e_next = min(max(battery - consumed + energy_arrived, 0), world.ne - 1)
            value = world.weight * eff + pen(queue) + next_values[q_next, e_next]
            best = max(best, value)
        hold_samples.append(best)
    u_hold = float(np.mean(hold_samples))
    return float(u_idle), u_hold, float(u_ref)


# -- serialization -------------------------------------------------------------


def save_store(store, path_or_stream):
    """Write the versioned flat-file layout documented in the module docstring."""
    if hasattr(path_or_stream, "write"):
        _write_store(store, path_or_stream)
    else:
        with open(path_or_stream, "w") as fh:
            _write_store(store, fh)


def _write_store(store, fh):
    fh.write(f"QFSTORE 1 {len(store.tables)}\n")
    for u, table in enumerate(store.tables):
        nq, ne, _ = table.shape
        fh.write(f"TABLE {u} {nq} {ne} {store.offsets[u]!r}\n")
        for q in range(nq):
            for e in range(ne):
                fh.write(f"{table[q, e, 0]!r} {table[q, e, 1]!r}\n")


def load_store(path_or_stream, config=None):
    """Read a store file; validates dimensions against config when given."""
    if hasattr(path_or_stream, "readline"):
        store = _read_store(path_or_stream)
    else:
        with open(path_or_stream) as fh:
            store = _read_store(fh)
    if config is not None:
        store.validate(config)
    return store


def _read_store(fh):
    header = fh.readline().split()
    if len(header) != 3 or header[0] != "QFSTORE":
        raise ConfigError("not a QFSTORE file")
    if header[1] != "1":
        raise ConfigError(f"unsupported QFSTORE version {header[1]}")
    count = int(header[2])
    tables, offsets = [], []
    for _ in range(count):
        line = fh.readline().split()
        if len(line) != 5 or line[0] != "TABLE":
            raise ConfigError("malformed TABLE header")
        nq, ne = int(line[2]), int(line[3])
        offsets.append(float(line[4]))
        table = np.empty((nq, ne, 2))
        for q in range(nq):
            for e in range(ne):
                v0, v1 = fh.readline().split()
                table[q, e, 0] = float(v0)
                table[q, e, 1] = float(v1)
        tables.append(table)
    return QFactorStore(tables=tables, offsets=np.asarray(offsets))


# -- caching -------------------------------------------------------------------

_WORLDS = {}


def _worlds_cache(config):
    worlds = _WORLDS.get(config)
    if worlds is None:
        worlds = ue_worlds(config)
        _WORLDS[config] = worlds
        if len(_WORLDS) > 64:
            _WORLDS.pop(next(iter(_WORLDS)))
    return worlds
