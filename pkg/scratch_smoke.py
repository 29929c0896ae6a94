"""Scratch: exercise exact solver, per-UE DP, env loop on a tiny instance."""
import numpy as np

from ranslice.config import (LearningSchedule, RanConfig, ScenarioConfig,
                             SliceConfig, UePlacement)
from ranslice import exact, qfactor, learning, simharness
from ranslice.radio import radio_model

# 1 slice, 1 UE, 1 subchannel, K=2, BQ=1, BE=1, 2 power actions.
slot = 0.01
ran = RanConfig(
    bandwidth_per_subchannel=8e6,
    num_subchannels=1,
    slot_duration=slot,
    cell_radius=100.0,
    path_loss_exponent=0.8,
    reference_gain=1.0,
    noise_power=3.981e-14,
    fading_mean=0.1,
    fading_levels=2,
    fpc_actions=(0.6, 1.0),
)
pw = 2.512e-11  # -76 dBm
sl = SliceConfig(
    slice_id=0, name="only", weight=1.0, num_ues=1,
    baseline_power=pw, buffer_capacity=1, battery_capacity=1,
    task_probability=1.0, packet_arrival_rate=0.8, energy_arrival_rate=0.8,
    max_delay=0.5, packet_size=1e5,
    energy_unit=pw * slot * 30.0,
)
cfg = ScenarioConfig(
    ran=ran, slices=(sl,),
    placements=(UePlacement(0, 0, 60.0),),
    schedule=LearningSchedule(max_iterations=2000),
)
cfg.validate()

model = radio_model(cfg)
print("pl:", model.path_loss, "power:", model.power, "cost:", model.cost_units)
print("levels:", model.levels)
print("rate table (ue0):", model.rate_table()[0])

solution = exact.solve_instance(cfg)
print("full theta:", solution.table.theta, "sweeps:", solution.table.iterations)

red = exact.solve_instance(cfg, reduced=True)
print("reduced theta:", red.table.theta)

table, theta = qfactor.solve_ue_table(cfg, 0, 0.0)
print("per-UE DP theta:", theta)

store = qfactor.QFactorStore(tables=[table], offsets=np.array([theta]))
res = qfactor.fixed_point_residual(store, cfg, np.zeros(1))
print("fixed-point residual:", np.abs(res[0]).max())

# env roll
env = simharness.Environment(
    cfg,
    channel_rng=simharness.derive_rng(0, "channel"),
    arrival_rng=simharness.derive_rng(0, "arrivals"),
)
learner = learning.init(cfg)
result = learning.run_online(env, learner, max_iterations=500)
print("learning slots:", len(result.trace), "stopped:", result.stopped)
print("reward est:", learner.reward_avg)
print("learned table:\n", learner.store.tables[0][:, :, 1] - learner.store.tables[0][:, :, 0])
print("dp advantage:\n", table[:, :, 1] - table[:, :, 0])

pol = simharness.LearnedPolicy(learner.store, learner.multipliers, cfg)
metrics = simharness.run_episode(pol, cfg, seed=1, horizon=20000)
print("learned policy wsr:", metrics.weighted_sum_rate)

oracle = simharness.OraclePolicy(solution)
m2 = simharness.run_episode(oracle, cfg, seed=1, horizon=20000)
print("oracle policy wsr:", m2.weighted_sum_rate, "theta:", solution.table.theta)
