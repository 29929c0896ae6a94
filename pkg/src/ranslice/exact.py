"""Exact average-reward CMDP machinery for desk-scale instances.

States are the joint (channel, queue, battery) tuples; the transition
kernel factorizes into an i.i.d. channel prior times per-UE queue and
battery pushforwards, which the solvers exploit: values only ever enter
Bellman backups through their channel-averaged projection onto the
(queue, battery) marginal.

Full-state indices follow the layout  s = h_index * n_qe + qe_index,
with h enumerated in row-major order over (ue, subchannel) level indices
and qe in row-major order over per-UE (queue, battery) pairs.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .config import ControlAction, Multipliers, SystemState
from .errors import CapExceededError, ConvergenceError
from .radio import radio_model

STATE_CAP_DEFAULT = 2_000_000
MODEL_ENTRY_CAP = 50_000_000  # reward + pmf tensor entries


# -- state spaces -----------------------------------------------------------


class QeSpace:
    """Row-major product space of per-UE (queue, battery) pairs."""

    def __init__(self, config):
        model = radio_model(config)
        self.dims = []
        for u in range(model.num_ues):
            self.dims.append(int(model.buffer_cap[u]) + 1)
            self.dims.append(int(model.battery_cap[u]) + 1)
        self.dims = tuple(self.dims)
        self.size = int(np.prod(self.dims)) if self.dims else 1
        self.num_ues = model.num_ues

    def index(self, queues, batteries):
        mixed = []
        for q, e in zip(queues, batteries):
            mixed.extend((int(q), int(e)))
        return int(np.ravel_multi_index(mixed, self.dims))

    def unindex(self, idx):
        mixed = np.unravel_index(idx, self.dims)
        queues = np.asarray(mixed[0::2], dtype=np.int64)
        batteries = np.asarray(mixed[1::2], dtype=np.int64)
        return queues, batteries


class StateSpace:
    """Exhaustive enumeration of system states, full or reduced mode.

    Full mode enumerates (channel, queue, battery); reduced mode drops the
    channel component and enumerates only (queue, battery).
    """

    def __init__(self, config, reduced, cap):
        model = radio_model(config)
        self.config = config
        self.reduced = reduced
        self.qe = QeSpace(config)
        num_entries = model.num_ues * config.ran.num_subchannels
        self.n_h = 1 if reduced else config.ran.fading_levels ** num_entries
        size = self.n_h * self.qe.size
        if size > cap:
            raise CapExceededError(
                f"state space has {size} states, exceeding the cap of {cap}",
                size=size,
            )
        self.size = size
        self.h_dims = (
            ()
            if reduced
            else (config.ran.fading_levels,) * num_entries
        )
        # channel prior over joint h realizations (product of the level pmf)
        probs = np.asarray(radio_model(config).level_probs)
        prior = np.ones(1)
        for _ in range(0 if reduced else num_entries):
            prior = np.kron(prior, probs)
        self.h_prior = prior

    def __len__(self):
        return self.size

    def channel_of(self, state_index):
        """(num_ues, N) level-index matrix of a full state."""
        if self.reduced:
            raise ValueError("reduced states carry no channel component")
        model = radio_model(self.config)
        h_idx = state_index // self.qe.size
        flat = np.unravel_index(h_idx, self.h_dims)
        return np.asarray(flat, dtype=np.int64).reshape(
            model.num_ues, self.config.ran.num_subchannels
        )

    def qe_of(self, state_index):
        return self.qe.unindex(state_index % self.qe.size)

    def system_state(self, state_index):
        model = radio_model(self.config)
        queues, batteries = self.qe_of(state_index)
        if self.reduced:
            channel = np.zeros(
                (model.num_ues, self.config.ran.num_subchannels), dtype=np.int64
            )
        else:
            channel = self.channel_of(state_index)
        return SystemState(channel=channel, queues=queues, batteries=batteries)

    def index_of(self, state):
        """Index of a SystemState (channel ignored in reduced mode)."""
        qe_idx = self.qe.index(state.queues, state.batteries)
        if self.reduced:
            return qe_idx
        h_idx = int(np.ravel_multi_index(state.channel.ravel(), self.h_dims))
        return h_idx * self.qe.size + qe_idx

    @property
    def reference_index(self):
        """Zero queues, full batteries, first channel level everywhere."""
        model = radio_model(self.config)
        qe_idx = self.qe.index(
            np.zeros(model.num_ues, dtype=np.int64), model.battery_cap
        )
        return qe_idx  # h index 0 contributes nothing: 0 * n_qe + qe_idx


def enumerate_states(config, reduced=False, cap=STATE_CAP_DEFAULT):
    """Exhaustive state enumeration; raises CapExceededError when too big."""
    return StateSpace(config, reduced=reduced, cap=cap)


# -- actions ----------------------------------------------------------------


@dataclass(frozen=True)
class JointAction:
    """Canonical joint action: subchannel owners plus per-UE fpc indices.

    owners[n] is the flat UE index holding subchannel n, or -1 for idle.
    fpc_idx entries of unassigned UEs are pinned to 0 so enumeration does
    not produce duplicate actions that differ only in irrelevant exponents.
    """

    owners: tuple
    fpc_idx: tuple

    def assigned(self, ue):
        return [n for n, o in enumerate(self.owners) if o == ue]

    def to_control_action(self, config):
        model = radio_model(config)
        n_sub = config.ran.num_subchannels
        assignment = np.zeros((model.num_ues, n_sub), dtype=np.int64)
        for n, owner in enumerate(self.owners):
            if owner >= 0:
                assignment[owner, n] = 1
        fpc = model.fpc_actions[np.asarray(self.fpc_idx, dtype=np.int64)]
        return ControlAction(assignment=assignment, fpc=np.asarray(fpc))


def enumerate_actions(config, cap=100_000):
    """All canonical joint actions for the instance."""
    model = radio_model(config)
    n_sub = config.ran.num_subchannels
    num_ues = model.num_ues
    n_phi = len(model.fpc_actions)
    actions = []
    for owners in itertools.product(range(-1, num_ues), repeat=n_sub):
        assigned = sorted({o for o in owners if o >= 0})
        for combo in itertools.product(range(n_phi), repeat=len(assigned)):
            fpc_idx = [0] * num_ues
            for ue, f in zip(assigned, combo):
                fpc_idx[ue] = f
            actions.append(JointAction(owners=owners, fpc_idx=tuple(fpc_idx)))
            if len(actions) > cap:
                raise CapExceededError(
                    f"action space exceeds the cap of {cap}", size=len(actions)
                )
    return actions


# -- per-UE slot outcome ----------------------------------------------------


def ue_outcome(config, ue, level_indices, owned_subchannels, phi_idx, queue, battery):
    """(effective_rate, served_packets, consumed_units) for one UE.

    level_indices is the UE's row of channel level indices; the energy
    check uses the aggregate rate over all owned subchannels.
    """
    model = radio_model(config)
    if not owned_subchannels:
        return 0.0, 0, 0
    ran = config.ran
    coeff = model.snr_coeff[ue, phi_idx]
    raw = sum(
        ran.bandwidth_per_subchannel
        * math.log2(1.0 + coeff * model.levels[level_indices[n]])
        for n in owned_subchannels
    )
    slice_cfg = config.slices[model.ue_slice[ue]]
    feasible = dyn.energy_feasible(
        battery, model.power[ue, phi_idx], queue, raw, slice_cfg, ran.slot_duration
    )
    eff = dyn.effective_rate(raw, feasible)
    if not feasible:
        return 0.0, 0, 0
    served = dyn.service_packets(eff, ran.slot_duration, slice_cfg.packet_size)
    return eff, served, int(model.cost_units[ue, phi_idx])


def per_stage_reward(multipliers, state, action, config):
    """Lagrangian per-stage reward of a (state, action) pair.

    Weighted sum of effective rates minus, per slice, the multiplier times
    the delay-surrogate excess over the slice budget.  The penalty enters
    with a minus sign so that constraint violations reduce the maximized
    objective.
    """
    model = radio_model(config)
    eta = np.asarray(
        multipliers.values if isinstance(multipliers, Multipliers) else multipliers,
        dtype=float,
    )
    if isinstance(action, JointAction):
        joint = action
    else:
        joint = _joint_from_control(action, config)
    reward = 0.0
    surrogate = np.zeros(model.num_slices)
    for u in range(model.num_ues):
        m = model.ue_slice[u]
        eff, _, _ = ue_outcome(
            config,
            u,
            state.channel[u],
            joint.assigned(u),
            joint.fpc_idx[u],
            int(state.queues[u]),
            int(state.batteries[u]),
        )
        reward += model.weight[u] * eff
        surrogate[m] += dyn.delay_surrogate(
            int(state.queues[u]), config.ran.slot_duration, config.slices[m]
        )
    for m, sl in enumerate(config.slices):
        reward -= eta[m] * (surrogate[m] - sl.max_delay)
    return reward


def _joint_from_control(action, config):
    model = radio_model(config)
    owners = []
    for n in range(config.ran.num_subchannels):
        col = np.flatnonzero(action.assignment[:, n])
        owners.append(int(col[0]) if len(col) else -1)
    fpc_idx = []
    for u in range(model.num_ues):
        if action.assignment[u].any():
            fpc_idx.append(model.fpc_index(float(action.fpc[u])))
        else:
            fpc_idx.append(0)
    return JointAction(owners=tuple(owners), fpc_idx=tuple(fpc_idx))


# -- transition kernel -------------------------------------------------------


def _pushforward(current, out, arrival_pmf, capacity):
    """pmf of clip(current - out + A, 0, capacity) with A ~ arrival_pmf."""
    vec = np.zeros(capacity + 1)
    base = current - out
    for a, p in enumerate(arrival_pmf):
        vec[min(max(base + a, 0), capacity)] += p
    return vec


def transition_row(state, action, config):
    """pmf over the joint next (queue, battery) index for one (s, a) pair.

    The channel component of the next state is independent of everything
    and distributed as the alphabet prior; the full-state row is the outer
    product of that prior with this vector.
    """
    model = radio_model(config)
    joint = action if isinstance(action, JointAction) else _joint_from_control(action, config)
    row = np.ones(1)
    for u in range(model.num_ues):
        _, served, consumed = ue_outcome(
            config,
            u,
            state.channel[u],
            joint.assigned(u),
            joint.fpc_idx[u],
            int(state.queues[u]),
            int(state.batteries[u]),
        )
        q_vec = _pushforward(
            int(state.queues[u]), served, model.packet_pmfs[u], int(model.buffer_cap[u])
        )
        e_vec = _pushforward(
            int(state.batteries[u]),
            consumed,
            model.energy_pmfs[u],
            int(model.battery_cap[u]),
        )
        row = np.kron(row, np.kron(q_vec, e_vec))
    return row


def transition_kernel(state, action, config):
    """Spec-level kernel row: (QeSpace, pmf over joint next (Q, E))."""
    return QeSpace(config), transition_row(state, action, config)


class TransitionKernel:
    """Dense factored kernel over a full state space and action list.

    qe_pmf[s, a] is the joint (queue, battery) next-state pmf; the channel
    prior is shared by every row.  row(s, a) materializes the full-state
    probability vector for verification.
    """

    def __init__(self, space, actions, config):
        if space.reduced:
            raise ValueError("kernel construction needs the full state space")
        size = space.size * len(actions) * space.qe.size
        if size > MODEL_ENTRY_CAP:
            raise CapExceededError(
                f"kernel tensor would hold {size} entries", size=size
            )
        self.space = space
        self.actions = actions
        self.config = config
        self.qe_pmf = np.empty((space.size, len(actions), space.qe.size))
        for s in range(space.size):
            state = space.system_state(s)
            for a, action in enumerate(actions):
                self.qe_pmf[s, a] = transition_row(state, action, config)

    def row(self, state_index, action_index):
        """Full next-state probability vector (length |S|)."""
        return np.kron(self.space.h_prior, self.qe_pmf[state_index, action_index])


def build_rewards(space, actions, config, multipliers):
    """(S, A) per-stage Lagrangian rewards for the given multipliers."""
    rate_part, delay_excess = _reward_parts(space, actions, config)
    eta = np.asarray(
        multipliers.values if isinstance(multipliers, Multipliers) else multipliers,
        dtype=float,
    )
    return rate_part - (delay_excess @ eta)[:, None]


def _reward_parts(space, actions, config):
    """Split rewards into the rate part (S, A) and delay excess (S, M)."""
    model = radio_model(config)
    rate_part = np.zeros((space.size, len(actions)))
    delay_excess = np.zeros((space.size, model.num_slices))
    for s in range(space.size):
        state = space.system_state(s)
        for m, sl in enumerate(config.slices):
            lo, hi = config.slice_ue_range(m)
            surr = sum(
                dyn.delay_surrogate(int(state.queues[u]), config.ran.slot_duration, sl)
                for u in range(lo, hi)
            )
            delay_excess[s, m] = surr - sl.max_delay
        for a, action in enumerate(actions):
            total = 0.0
            for u in range(model.num_ues):
                eff, _, _ = ue_outcome(
                    config,
                    u,
                    state.channel[u],
                    action.assigned(u),
                    action.fpc_idx[u],
                    int(state.queues[u]),
                    int(state.batteries[u]),
                )
                total += model.weight[u] * eff
            rate_part[s, a] = total
    return rate_part, delay_excess


# -- solvers ------------------------------------------------------------------


@dataclass
class ValueTable:
    """Average reward plus relative values normalized to 0 at the reference."""

    theta: float
    values: np.ndarray
    reference_index: int
    greedy: np.ndarray = field(default=None)
    iterations: int = 0
    span: float = float("inf")


def _backup(kernel, reward, values_qe):
    """One Bellman backup given channel-averaged continuation values."""
    return reward + kernel.qe_pmf @ values_qe


def _span_floor(values):
    """Smallest span distinguishable from rounding noise at this scale."""
    scale = float(np.abs(values).max(initial=0.0))
    return 64.0 * np.finfo(float).eps * max(1.0, scale)


def relative_value_iteration(space, kernel, reward, tol=1e-9, max_iter=20000):
    """Average-reward value iteration with reference-state normalization.

    Iterates the Bellman max-operator, renormalizing at the reference state
    each sweep, until the span of successive differences drops below tol.
    Returns the ValueTable (with the greedy policy) over full states.
    """
    n_qe = space.qe.size
    ref = space.reference_index
    values = np.zeros(space.size)
    theta = 0.0
    span = float("inf")
    for it in range(1, max_iter + 1):
        values_qe = space.h_prior @ values.reshape(space.n_h, n_qe)
        q = _backup(kernel, reward, values_qe)
        tv = q.max(axis=1)
        diff = tv - values
        span = float(diff.max() - diff.min())
        theta = float(tv[ref] - values[ref])
        new_values = tv - tv[ref]
        values = new_values
        if span < max(tol, _span_floor(tv)):
            break
    else:
        raise ConvergenceError(
            f"value iteration span {span:.3e} above {tol:.1e} "
            f"after {max_iter} sweeps",
            residual=span,
        )
    values_qe = space.h_prior @ values.reshape(space.n_h, n_qe)
    greedy = _backup(kernel, reward, values_qe).argmax(axis=1)
    return ValueTable(
        theta=theta,
        values=values,
        reference_index=ref,
        greedy=greedy,
        iterations=it,
        span=span,
    )


def solve_reduced(space, kernel, reward, tol=1e-9, max_iter=20000):
    """Reduced Bellman recursion over (queue, battery) states only.

    The conditional-action structure lets the max be taken per channel
    realization before averaging, so one sweep is: per full state maximize
    the backup, then project onto the (queue, battery) marginal with the
    channel prior.  Returns a ValueTable over the reduced space plus the
    induced full-state greedy policy.
    """
    n_qe = space.qe.size
    ref = space.reference_index  # reference has channel index 0; qe part only
    values = np.zeros(n_qe)
    theta = 0.0
    span = float("inf")
    for it in range(1, max_iter + 1):
        q = _backup(kernel, reward, values)
        tv_full = q.max(axis=1)
        tv = space.h_prior @ tv_full.reshape(space.n_h, n_qe)
        diff = tv - values
        span = float(diff.max() - diff.min())
        theta = float(tv[ref] - values[ref])
        values = tv - tv[ref]
        if span < max(tol, _span_floor(tv)):
            break
    else:
        raise ConvergenceError(
            f"reduced value iteration span {span:.3e} above {tol:.1e} "
            f"after {max_iter} sweeps",
            residual=span,
        )
    greedy = _backup(kernel, reward, values).argmax(axis=1)
    return ValueTable(
        theta=theta,
        values=values,
        reference_index=ref,
        greedy=greedy,
        iterations=it,
        span=span,
    )


def reduce_values(space, table):
    """Project full-state values onto (queue, battery) with the channel prior."""
    values_qe = space.h_prior @ table.values.reshape(space.n_h, space.qe.size)
    values_qe = values_qe - values_qe[space.reference_index]
    return ValueTable(
        theta=table.theta,
        values=values_qe,
        reference_index=space.reference_index,
    )


@dataclass
class PolicyEvaluation:
    average_reward: float
    stationary: np.ndarray
    per_slice_delay: np.ndarray      # expected delay surrogate, seconds
    per_slice_rate: np.ndarray       # expected effective rate, bits/s
    residual: float


def evaluate_policy(policy, kernel, reward, config=None):
    """Stationary-distribution evaluation of a deterministic policy.

    Solves pi = pi P for the induced chain and returns the expected reward
    together with each slice's expected delay surrogate and effective rate.
    Emits a reducible-chain warning when the linear solve looks unreliable.
    """
    space = kernel.space
    config = config or kernel.config
    size = space.size
    transition = np.empty((size, size))
    for s in range(size):
        transition[s] = kernel.row(s, int(policy[s]))
    a = transition.T - np.eye(size)
    a[-1, :] = 1.0
    b = np.zeros(size)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    residual = float(np.abs(pi @ transition - pi).max())
    if residual > 1e-8 or pi.min() < -1e-8:
        warnings.warn(
            f"stationary solve residual {residual:.2e}; chain may be reducible",
            RuntimeWarning,
        )
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    r_pi = reward[np.arange(size), policy]
    model = radio_model(config)
    rate_part, delay_excess = _reward_parts(space, list(kernel.actions), config)
    per_slice_delay = pi @ (
        delay_excess + np.asarray([sl.max_delay for sl in config.slices])
    )
    per_slice_rate = np.zeros(model.num_slices)
    for s in range(size):
        if pi[s] == 0.0:
            continue
        state = space.system_state(s)
        action = kernel.actions[int(policy[s])]
        for u in range(model.num_ues):
            eff, _, _ = ue_outcome(
                config,
                u,
                state.channel[u],
                action.assigned(u),
                action.fpc_idx[u],
                int(state.queues[u]),
                int(state.batteries[u]),
            )
            per_slice_rate[model.ue_slice[u]] += pi[s] * eff
    return PolicyEvaluation(
        average_reward=float(pi @ r_pi),
        stationary=pi,
        per_slice_delay=per_slice_delay,
        per_slice_rate=per_slice_rate,
        residual=residual,
    )


# -- exact instance bundling --------------------------------------------------


@dataclass
class ExactSolution:
    space: StateSpace
    kernel: TransitionKernel
    reward: np.ndarray
    table: ValueTable
    multipliers: Multipliers


def solve_instance(config, multipliers=None, tol=1e-9, max_iter=20000,
                   cap=STATE_CAP_DEFAULT, reduced=False):
    """Enumerate, build the kernel, and run value iteration in one call."""
    space = enumerate_states(config, reduced=False, cap=cap)
    actions = enumerate_actions(config)
    kernel = TransitionKernel(space, actions, config)
    if multipliers is None:
        multipliers = Multipliers.zeros(
            config.num_slices, config.schedule.lm_floor, config.schedule.lm_ceiling
        )
    reward = build_rewards(space, actions, config, multipliers)
    solver = solve_reduced if reduced else relative_value_iteration
    table = solver(space, kernel, reward, tol=tol, max_iter=max_iter)
    return ExactSolution(
        space=space, kernel=kernel, reward=reward, table=table, multipliers=multipliers
    )


@dataclass
class DualDescentResult:
    multipliers: Multipliers
    theta: float
    policy: np.ndarray
    per_slice_delay: np.ndarray
    history: list
    converged: bool


def dual_descent(config, schedule, tol=1e-8, max_outer=200, solver_tol=1e-9):
    """Projected-subgradient outer loop on the per-slice multipliers.

    Each step solves the inner unconstrained problem to optimality at the
    current multipliers, measures the stationary delay surrogates of the
    greedy policy, and moves the multipliers along the constraint residual.
    The best constraint-satisfying policy seen is retained and returned.
    """
    space = enumerate_states(config, reduced=False)
    actions = enumerate_actions(config)
    kernel = TransitionKernel(space, actions, config)
    rate_part, delay_excess = _reward_parts(space, actions, config)
    max_delays = np.asarray([sl.max_delay for sl in config.slices])

    eta = np.full(config.num_slices, schedule.lm_floor)
    history = []
    best = None
    converged = False
    last = None
    for k in range(max_outer):
        reward = rate_part - (delay_excess @ eta)[:, None]
        table = relative_value_iteration(space, kernel, reward, tol=solver_tol)
        evaluation = evaluate_policy(table.greedy, kernel, reward, config)
        residual = evaluation.per_slice_delay - max_delays
        step = schedule.lm_step(k)
        new_eta = np.clip(
            eta + step * residual, schedule.lm_floor, schedule.lm_ceiling
        )
        history.append(
            {
                "iteration": k,
                "eta": eta.copy(),
                "theta": table.theta,
                "per_slice_delay": evaluation.per_slice_delay.copy(),
                "residual": residual.copy(),
            }
        )
        feasible = bool(np.all(residual <= tol))
        if feasible and (best is None or evaluation.average_reward > best[0]):
            best = (evaluation.average_reward, table.greedy.copy(),
                    evaluation.per_slice_delay.copy(), table.theta)
        last = (table, evaluation, residual)
        moved = float(np.abs(new_eta - eta).max())
        eta = new_eta
        if moved < schedule.lm_tolerance and np.all(residual <= tol):
            converged = True
            break
    if not converged and best is None and last is not None:
        # keep the final iterate when nothing satisfied the constraints
        table, evaluation, residual = last
        best = (evaluation.average_reward, table.greedy.copy(),
                evaluation.per_slice_delay.copy(), table.theta)
    multipliers = Multipliers(
        values=eta, floor=schedule.lm_floor, ceiling=schedule.lm_ceiling
    )
    return DualDescentResult(
        multipliers=multipliers,
        theta=best[3],
        policy=best[1],
        per_slice_delay=best[2],
        history=history,
        converged=converged,
    )


# -- export -------------------------------------------------------------------


def export_solution(path, space, table, actions=None):
    """CSV rows of (state index, value, greedy action) for inspection."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state_index", "value", "greedy_action"])
        greedy = table.greedy if table.greedy is not None else [None] * len(table.values)
        for s, v in enumerate(table.values):
            action = ""
            if greedy is not None and greedy[s] is not None and actions is not None:
                act = actions[int(greedy[s])]
                action = f"owners={act.owners};fpc_idx={act.fpc_idx}"
            writer.writerow([s, repr(float(v)), action])
