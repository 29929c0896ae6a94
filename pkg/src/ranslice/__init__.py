"""Dynamic virtual resource allocation for uplink RAN slicing.

A discrete-time simulator and solver suite: exact average-reward CMDP
solvers for desk-scale instances, a linear per-UE value decomposition
with greedy subchannel allocation and local power control, an online
two-timescale learning loop, reference baseline policies, and a seeded
experiment harness.
"""

__version__ = "0.1.0"

from .config import (
    ControlAction,
    LearningSchedule,
    Multipliers,
    RanConfig,
    ScenarioConfig,
    SliceConfig,
    SystemState,
    UePlacement,
    load_scenario,
    place_ues,
    save_scenario,
)
from .channel import (
    FadingAlphabet,
    build_alphabet,
    path_loss,
    sample_channel,
    subchannel_rate,
    transmit_power,
)
from .dynamics import (
    ArrivalSample,
    average_delay,
    drop_probability,
    effective_rate,
    energy_feasible,
    sample_arrivals,
    slice_delay,
    step_energy,
    step_queue,
)
from .errors import (
    CapExceededError,
    ConfigError,
    ConvergenceError,
    InfiniteDelayError,
    UndefinedMetricError,
)
from .qfactor import QFactorStore
from .simharness import EpisodeMetrics, Environment, run_episode

__all__ = [
    "ArrivalSample",
    "CapExceededError",
    "ConfigError",
    "ControlAction",
    "ConvergenceError",
    "EpisodeMetrics",
    "Environment",
    "FadingAlphabet",
    "InfiniteDelayError",
    "LearningSchedule",
    "Multipliers",
    "QFactorStore",
    "RanConfig",
    "ScenarioConfig",
    "SliceConfig",
    "SystemState",
    "UePlacement",
    "UndefinedMetricError",
    "average_delay",
    "build_alphabet",
    "drop_probability",
    "effective_rate",
    "energy_feasible",
    "load_scenario",
    "path_loss",
    "place_ues",
    "run_episode",
    "sample_arrivals",
    "sample_channel",
    "save_scenario",
    "slice_delay",
    "step_energy",
    "step_queue",
    "subchannel_rate",
    "transmit_power",
]
