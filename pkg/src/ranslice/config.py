"""Domain types and scenario loading.

A scenario is described by a YAML file with three top-level sections::

    ran:            # cell-wide radio constants
      bandwidth_per_subchannel: 8.0e6   # Hz
      num_subchannels: 6
      slot_duration: 0.003              # seconds
      cell_radius: 100.0                # meters
      path_loss_exponent: 0.8
      reference_gain: 1.0               # linear, or reference_gain_db
      noise_power_dbm: -104             # or noise_power (watts)
      fading_mean_db: -10               # or fading_mean (linear)
      fading_levels: 4
      fpc_actions: [0.6, 0.8, 1.0]      # optional, this is the default
    slices:         # ordered list, one entry per slice
      - name: embb
        weight: 1.5
        num_ues: 2
        baseline_power_dbm: -76         # or baseline_power (watts)
        buffer_capacity: 6              # packets
        battery_capacity: 6             # energy units
        task_probability: 1.0
        packet_arrival_rate: 3.0        # packets / slot
        energy_arrival_rate: 3.0        # units / slot
        max_delay: 0.1                  # seconds
        packet_size: 1.0e5              # bits
        energy_unit_scale: 7.0          # e_u = scale * baseline_power * slot
                                        # (or energy_unit, joules, directly)
    placements:     # optional; omit to place UEs from placement_seed
      - {slice_id: 0, ue_id: 0, distance: 60.0}
    placement_seed: 7                   # used when placements is omitted
    schedule:       # optional learning-schedule overrides
      q_step_scale: 1.0
      q_step_decay: 0.6
      lm_step_scale: 0.1
      lm_step_decay: 0.9
      lm_floor: 0.0
      lm_ceiling: 100.0
      q_tolerance: 1.0e-3
      lm_tolerance: 1.0e-3
      max_iterations: 5000

dB/dBm fields are converted to linear at load time; all internal
computation is linear.  Exactly one form of each power-like field may be
given.  Configs are immutable after load and safe to share between workers.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError

DEFAULT_FPC_ACTIONS = (0.6, 0.8, 1.0)


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm):
    return 10.0 ** (dbm / 10.0) * 1e-3


def linear_to_db(x):
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class RanConfig:
    """Cell-wide radio constants shared by every slice."""

    bandwidth_per_subchannel: float        # Hz
    num_subchannels: int
    slot_duration: float                   # seconds
    cell_radius: float                     # meters
    path_loss_exponent: float
    reference_gain: float                  # linear gain at 1 m
    noise_power: float                     # watts, identical on every subchannel
    fading_mean: float                     # linear mean of |g|^2
    fading_levels: int                     # size of the discrete fading alphabet
    fpc_actions: tuple = DEFAULT_FPC_ACTIONS

    def validate(self):
        if self.bandwidth_per_subchannel <= 0:
            raise ConfigError("bandwidth_per_subchannel must be positive")
        if self.num_subchannels < 1:
            raise ConfigError("num_subchannels must be >= 1")
        if self.slot_duration <= 0:
            raise ConfigError("slot_duration must be positive")
        if self.cell_radius <= 0:
            raise ConfigError("cell_radius must be positive")
        if self.path_loss_exponent <= 0:
            raise ConfigError("path_loss_exponent must be positive")
        if self.reference_gain <= 0:
            raise ConfigError("reference_gain must be positive")
        if self.noise_power <= 0:
            raise ConfigError("noise_power must be positive")
        if self.fading_mean <= 0:
            raise ConfigError("fading_mean must be positive")
        if self.fading_levels < 1:
            raise ConfigError("fading_levels must be >= 1")
        if len(self.fpc_actions) == 0:
            raise ConfigError("fpc_actions must be non-empty")
        for phi in self.fpc_actions:
            if not 0.0 < phi <= 1.0:
                raise ConfigError("fpc_actions values must lie in (0, 1]")
        if any(b <= a for a, b in zip(self.fpc_actions, self.fpc_actions[1:])):
            raise ConfigError("fpc_actions must be strictly increasing")


@dataclass(frozen=True)
class SliceConfig:
    """Per-slice service parameters and unit-bridging constants.

    Queues count packets and batteries count integer energy units.  A slot
    of transmission serves floor(rate * slot / packet_size) packets and
    consumes ceil(power * slot / energy_unit) units.
    """

    slice_id: int
    weight: float                          # objective weight
    num_ues: int
    baseline_power: float                  # watts, pre power-control
    buffer_capacity: int                   # packets
    battery_capacity: int                  # energy units
    task_probability: float                # Bernoulli gate on packet arrivals
    packet_arrival_rate: float             # Poisson mean, packets / slot
    energy_arrival_rate: float             # Poisson mean, units / slot
    max_delay: float                       # seconds
    packet_size: float                     # bits
    energy_unit: float                     # joules per battery unit
    name: str = ""

    def validate(self):
        if self.weight <= 0:
            raise ConfigError("weight must be positive")
        if self.num_ues < 1:
            raise ConfigError("num_ues must be >= 1")
        if self.baseline_power <= 0:
            raise ConfigError("baseline_power must be positive")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity must be >= 1")
        if self.battery_capacity < 1:
            raise ConfigError("battery_capacity must be >= 1")
        if not 0.0 <= self.task_probability <= 1.0:
            raise ConfigError("task_probability must lie in [0, 1]")
        if self.packet_arrival_rate < 0:
            raise ConfigError("packet_arrival_rate must be >= 0")
        if self.energy_arrival_rate < 0:
            raise ConfigError("energy_arrival_rate must be >= 0")
        if self.max_delay <= 0:
            raise ConfigError("max_delay must be positive")
        if self.packet_size <= 0:
            raise ConfigError("packet_size must be positive")
        if self.energy_unit <= 0:
            raise ConfigError("energy_unit must be positive")


@dataclass(frozen=True)
class UePlacement:
    """Distance of one UE from the base station."""

    slice_id: int
    ue_id: int
    distance: float                        # meters

    def validate(self, cell_radius):
        if not 0.0 < self.distance <= cell_radius:
            raise ConfigError(
                f"distance must lie in (0, {cell_radius}] for slice "
                f"{self.slice_id} ue {self.ue_id}"
            )


@dataclass(frozen=True)
class LearningSchedule:
    """Step sizes, multiplier projection bounds and termination thresholds.

    Step sizes follow scale / (1 + t) ** decay.  The multiplier decay must
    be strictly larger than the table decay so the multiplier iterate runs
    on the slower timescale.
    """

    q_step_scale: float = 1.0
    q_step_decay: float = 0.6
    lm_step_scale: float = 0.1
    lm_step_decay: float = 0.9
    lm_floor: float = 0.0
    lm_ceiling: float = 100.0
    q_tolerance: float = 1e-3
    lm_tolerance: float = 1e-3
    max_iterations: int = 5000

    def q_step(self, t):
        return self.q_step_scale / (1.0 + t) ** self.q_step_decay

    def lm_step(self, t):
        return self.lm_step_scale / (1.0 + t) ** self.lm_step_decay

    def is_two_timescale(self):
        """lm_step(t) / q_step(t) -> 0; trivially true for a frozen multiplier."""
        if self.lm_step_scale == 0.0:
            return True
        return self.lm_step_decay > self.q_step_decay

    def validate(self):
        if self.q_step_scale <= 0:
            raise ConfigError("q_step_scale must be positive")
        if self.q_step_decay < 0:
            raise ConfigError("q_step_decay must be >= 0")
        if self.lm_step_scale < 0:
            raise ConfigError("lm_step_scale must be >= 0")
        if self.lm_step_decay < 0:
            raise ConfigError("lm_step_decay must be >= 0")
        if self.lm_floor < 0:
            raise ConfigError("lm_floor must be >= 0")
        if self.lm_floor >= self.lm_ceiling:
            raise ConfigError("lm_floor must be < lm_ceiling")
        if self.q_tolerance <= 0:
            raise ConfigError("q_tolerance must be positive")
        if self.lm_tolerance <= 0:
            raise ConfigError("lm_tolerance must be positive")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")


@dataclass(frozen=True)
class ScenarioConfig:
    """A full experiment description: radio constants, slices, placements."""

    ran: RanConfig
    slices: tuple                          # tuple[SliceConfig]
    placements: tuple                      # tuple[UePlacement], one per UE
    schedule: LearningSchedule = LearningSchedule()

    def validate(self):
        self.ran.validate()
        seen = set()
        for idx, sl in enumerate(self.slices):
            if sl.slice_id != idx:
                raise ConfigError("slice_id values must be 0..M-1 in order")
            if sl.slice_id in seen:
                raise ConfigError("slice_id values must be unique")
            seen.add(sl.slice_id)
            sl.validate()
        expected = [(sl.slice_id, i) for sl in self.slices for i in range(sl.num_ues)]
        got = [(p.slice_id, p.ue_id) for p in self.placements]
        if got != expected:
            raise ConfigError(
                "placements must list every (slice_id, ue_id) in order"
            )
        for p in self.placements:
            p.validate(self.ran.cell_radius)
        self.schedule.validate()

    # -- convenience views -------------------------------------------------

    @property
    def num_slices(self):
        return len(self.slices)

    @property
    def num_ues_total(self):
        return sum(sl.num_ues for sl in self.slices)

    def ue_slices(self):
        """Slice index of each UE in flat (slice, ue) order."""
        return [sl.slice_id for sl in self.slices for _ in range(sl.num_ues)]

    def ue_distances(self):
        return [p.distance for p in self.placements]

    def slice_ue_range(self, slice_id):
        """Half-open flat-index range of the UEs belonging to one slice."""
        start = sum(sl.num_ues for sl in self.slices[:slice_id])
        return start, start + self.slices[slice_id].num_ues


# -- runtime state and actions --------------------------------------------


@dataclass
class SystemState:
    """Joint channel / queue / battery state at one slot boundary.

    channel holds indices into the fading alphabet, shape (num_ues, N);
    queues and batteries hold integer counts, shape (num_ues,).
    """

    channel: np.ndarray
    queues: np.ndarray
    batteries: np.ndarray

    def copy(self):
        return SystemState(
            self.channel.copy(), self.queues.copy(), self.batteries.copy()
        )

    def validate(self, config):
        if self.channel.shape != (config.num_ues_total, config.ran.num_subchannels):
            raise ConfigError("channel shape mismatch")
        if np.any(self.channel < 0) or np.any(self.channel >= config.ran.fading_levels):
            raise ConfigError("channel index out of range")
        for u, m in enumerate(config.ue_slices()):
            sl = config.slices[m]
            if not 0 <= self.queues[u] <= sl.buffer_capacity:
                raise ConfigError("queues out of range")
            if not 0 <= self.batteries[u] <= sl.battery_capacity:
                raise ConfigError("batteries out of range")


@dataclass
class Multipliers:
    """Per-slice nonnegative dual prices on the delay constraints."""

    values: np.ndarray
    floor: float = 0.0
    ceiling: float = 100.0

    @classmethod
    def zeros(cls, num_slices, floor=0.0, ceiling=100.0):
        return cls(values=np.full(num_slices, floor, dtype=float),
                   floor=floor, ceiling=ceiling)

    def clamp(self):
        np.clip(self.values, self.floor, self.ceiling, out=self.values)
        return self

    def copy(self):
        return Multipliers(self.values.copy(), self.floor, self.ceiling)

    def validate(self):
        if np.any(self.values < self.floor) or np.any(self.values > self.ceiling):
            raise ConfigError("multipliers must lie within [floor, ceiling]")


@dataclass
class ControlAction:
    """Binary subchannel assignment plus a power-control exponent per UE.

    Each subchannel column of assignment holds at most one 1.  fpc values
    are members of the configured action set; the value is irrelevant for
    UEs with no subchannel.
    """

    assignment: np.ndarray                 # (num_ues, N) in {0, 1}
    fpc: np.ndarray                        # (num_ues,)

    def validate(self, config):
        if np.any((self.assignment != 0) & (self.assignment != 1)):
            raise ConfigError("assignment entries must be 0 or 1")
        if np.any(self.assignment.sum(axis=0) > 1):
            raise ConfigError("each subchannel may serve at most one UE")
        allowed = np.asarray(config.ran.fpc_actions)
        if not np.all(np.isclose(self.fpc[:, None], allowed[None, :]).any(axis=1)):
            raise ConfigError("fpc values must be members of fpc_actions")


# -- loading / saving ------------------------------------------------------


def _take_power_field(section, base, unit, where):
    """Resolve a field given either linearly or in dB/dBm form."""
    lin_key, db_key = base, f"{base}_{unit}"
    has_lin, has_db = lin_key in section, db_key in section
    if has_lin and has_db:
        raise ConfigError(f"{where}: give {lin_key} or {db_key}, not both")
    if has_lin:
        return float(section.pop(lin_key))
    if has_db:
        value = float(section.pop(db_key))
        return dbm_to_watts(value) if unit == "dbm" else db_to_linear(value)
    raise ConfigError(f"{where}: missing {lin_key} (or {db_key})")


def _reject_unknown(section, known, where):
    extra = set(section) - set(known)
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")


def _load_ran(section):
    section = dict(section)
    noise = _take_power_field(section, "noise_power", "dbm", "ran")
    gain = _take_power_field(section, "reference_gain", "db", "ran")
    fading = _take_power_field(section, "fading_mean", "db", "ran")
    known = (
        "bandwidth_per_subchannel num_subchannels slot_duration cell_radius "
        "path_loss_exponent fading_levels fpc_actions"
    ).split()
    _reject_unknown(section, known, "ran")
    try:
        return RanConfig(
            bandwidth_per_subchannel=float(section["bandwidth_per_subchannel"]),
            num_subchannels=int(section["num_subchannels"]),
            slot_duration=float(section["slot_duration"]),
            cell_radius=float(section["cell_radius"]),
            path_loss_exponent=float(section["path_loss_exponent"]),
            reference_gain=gain,
            noise_power=noise,
            fading_mean=fading,
            fading_levels=int(section["fading_levels"]),
            fpc_actions=tuple(
                float(p) for p in section.get("fpc_actions", DEFAULT_FPC_ACTIONS)
            ),
        )
    except KeyError as exc:
        raise ConfigError(f"ran: missing {exc.args[0]}") from None


def _load_slice(section, idx, slot_duration):
    section = dict(section)
    where = f"slices[{idx}]"
    power = _take_power_field(section, "baseline_power", "dbm", where)
    if "energy_unit" in section and "energy_unit_scale" in section:
        raise ConfigError(f"{where}: give energy_unit or energy_unit_scale, not both")
    if "energy_unit" in section:
        energy_unit = float(section.pop("energy_unit"))
    else:
        # default: one battery unit buys one slot at baseline power
        scale = float(section.pop("energy_unit_scale", 1.0))
        if scale <= 0:
            raise ConfigError(f"{where}: energy_unit_scale must be positive")
        energy_unit = scale * power * slot_duration
    known = (
        "name weight num_ues buffer_capacity battery_capacity task_probability "
        "packet_arrival_rate energy_arrival_rate max_delay packet_size"
    ).split()
    _reject_unknown(section, known, where)
    try:
        return SliceConfig(
            slice_id=idx,
            name=str(section.get("name", f"slice{idx}")),
            weight=float(section["weight"]),
            num_ues=int(section["num_ues"]),
            baseline_power=power,
            buffer_capacity=int(section["buffer_capacity"]),
            battery_capacity=int(section["battery_capacity"]),
            task_probability=float(section["task_probability"]),
            packet_arrival_rate=float(section["packet_arrival_rate"]),
            energy_arrival_rate=float(section["energy_arrival_rate"]),
            max_delay=float(section["max_delay"]),
            packet_size=float(section["packet_size"]),
            energy_unit=energy_unit,
        )
    except KeyError as exc:
        raise ConfigError(f"{where}: missing {exc.args[0]}") from None


def load_scenario(path):
    """Load and validate a scenario file; raises ConfigError on any problem."""
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"failed to parse {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    _reject_unknown(
        dict(doc), ("ran", "slices", "placements", "placement_seed", "schedule"), "scenario"
    )
    if "ran" not in doc:
        raise ConfigError("scenario: missing ran section")
    if "slices" not in doc or not doc["slices"]:
        raise ConfigError("scenario: missing slices section")
    ran = _load_ran(doc["ran"])
    slices = tuple(
        _load_slice(s, i, ran.slot_duration) for i, s in enumerate(doc["slices"])
    )
    schedule = LearningSchedule(**doc.get("schedule", {}))

    partial = ScenarioConfig(ran=ran, slices=slices, placements=(), schedule=schedule)
    if "placements" in doc:
        placements = tuple(
            UePlacement(int(p["slice_id"]), int(p["ue_id"]), float(p["distance"]))
            for p in doc["placements"]
        )
    else:
        seed = int(doc.get("placement_seed", 0))
        placements = place_ues(partial, seed)
    config = dataclasses.replace(partial, placements=placements)
    config.validate()
    return config


def save_scenario(config, path):
    """Write a scenario back out; load_scenario(save_scenario(c)) == c."""
    doc = {
        "ran": {
            "bandwidth_per_subchannel": config.ran.bandwidth_per_subchannel,
            "num_subchannels": config.ran.num_subchannels,
            "slot_duration": config.ran.slot_duration,
            "cell_radius": config.ran.cell_radius,
            "path_loss_exponent": config.ran.path_loss_exponent,
            "reference_gain": config.ran.reference_gain,
            "noise_power": config.ran.noise_power,
            "fading_mean": config.ran.fading_mean,
            "fading_levels": config.ran.fading_levels,
            "fpc_actions": list(config.ran.fpc_actions),
        },
        "slices": [
            {
                "name": sl.name,
                "weight": sl.weight,
                "num_ues": sl.num_ues,
                "baseline_power": sl.baseline_power,
                "buffer_capacity": sl.buffer_capacity,
                "battery_capacity": sl.battery_capacity,
                "task_probability": sl.task_probability,
                "packet_arrival_rate": sl.packet_arrival_rate,
                "energy_arrival_rate": sl.energy_arrival_rate,
                "max_delay": sl.max_delay,
                "packet_size": sl.packet_size,
                "energy_unit": sl.energy_unit,
            }
            for sl in config.slices
        ],
        "placements": [
            {"slice_id": p.slice_id, "ue_id": p.ue_id, "distance": p.distance}
            for p in config.placements
        ],
        "schedule": {
            "q_step_scale": config.schedule.q_step_scale,
            "q_step_decay": config.schedule.q_step_decay,
            "lm_step_scale": config.schedule.lm_step_scale,
            "lm_step_decay": config.schedule.lm_step_decay,
            "lm_floor": config.schedule.lm_floor,
            "lm_ceiling": config.schedule.lm_ceiling,
            "q_tolerance": config.schedule.q_tolerance,
            "lm_tolerance": config.schedule.lm_tolerance,
            "max_iterations": config.schedule.max_iterations,
        },
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def place_ues(config, seed):
    """Draw one uniform-disk placement per UE, deterministic for a seed.

    A point uniform on the disk of radius D has P(d <= x) = (x/D)^2, so
    distances are D * sqrt(u) with u uniform on (0, 1].
    """
    rng = np.random.default_rng(seed)
    placements = []
    for sl in config.slices:
        for i in range(sl.num_ues):
            u = 1.0 - rng.random()           # (0, 1], keeps distance > 0
            d = config.ran.cell_radius * math.sqrt(u)
            placements.append(UePlacement(sl.slice_id, i, d))
    return tuple(placements)
