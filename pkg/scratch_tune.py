"""Scratch: grid-probe desk scenario parameters for the figure criteria."""
import itertools
import sys
import time

import numpy as np

from ranslice.config import (LearningSchedule, RanConfig, ScenarioConfig,
                             SliceConfig, UePlacement)
from ranslice import simharness, baselines
from ranslice.radio import radio_model


def build(slot, alpha, s, weights, lm_scale, lm_ceiling, train_iter=6000, dist=60.0):
    ran = RanConfig(8e6, 6, slot, 100.0, alpha, 1.0, 3.981e-14, 0.1, 4,
                    (0.6, 0.8, 1.0))
    def mk(idx, name, p_dbm, bq, be, dmax, z, w):
        p = 10 ** (p_dbm / 10) * 1e-3
        return SliceConfig(idx, w, 2, p, bq, be, 1.0, 3.0, 3.0, dmax, z,
                           s * p * slot, name)
    slices = (mk(0, "embb", -76, 6, 6, 0.1, 1e5, weights[0]),
              mk(1, "urllc", -73, 6, 6, 0.01, 1e4, weights[1]),
              mk(2, "mmtc", -79, 4, 4, 3.0, 2e3, weights[2]))
    placements = tuple(UePlacement(m, i, dist) for m in range(3) for i in range(2))
    sched = LearningSchedule(q_step_scale=1.0, q_step_decay=0.6,
                             lm_step_scale=lm_scale, lm_step_decay=0.9,
                             lm_floor=0.0, lm_ceiling=lm_ceiling,
                             q_tolerance=1e-6, lm_tolerance=1e-6,
                             max_iterations=train_iter)
    cfg = ScenarioConfig(ran=ran, slices=slices, placements=placements,
                         schedule=sched)
    cfg.validate()
    return cfg


def probe(cfg, seeds=(10, 11), horizon=6000, train=6000):
    rows = {}
    for name in ("proposed", "qsi", "random"):
        wsr, drops, delays, rates = [], [], [], []
        for seed in seeds:
            pol = simharness.make_policy(name, cfg, seed, train_slots=train)
            m = simharness.run_episode(pol, cfg, seed, horizon=horizon)
            wsr.append(m.weighted_sum_rate)
            drops.append(m.per_slice_drop)
            delays.append(m.per_slice_delay)
            rates.append(m.per_slice_rate)
        rows[name] = (np.mean(wsr), np.mean(drops, axis=0),
                      np.mean(delays, axis=0), np.mean(rates, axis=0))
    return rows


def show(tag, rows):
    p, q, r = rows["proposed"][0], rows["qsi"][0], rows["random"][0]
    ok4 = "OK " if p >= q >= r else "BAD"
    dr = rows["proposed"][1]
    ok6 = "OK " if dr[2] > dr[0] and dr[2] > dr[1] else "BAD"
    du = rows["proposed"][2][1]
    print(f"{tag:42s} [{ok4}] wsr p/q/r = {p/1e6:7.1f}/{q/1e6:7.1f}/{r/1e6:7.1f}"
          f"  [{ok6}] drops={np.round(dr,2)}  urllc_delay={du*1e3:8.1f}ms")
    sys.stdout.flush()


if __name__ == "__main__":
    slot = 0.003
    grids = [
        # (alpha, s, weights, lm_scale, lm_ceiling, tag-extra)
        (1.0, 13.5, (1.5, 1.0, 1.0), 0.0, 1.0),
        (1.0, 13.5, (1.5, 1.0, 1.0), 2e11, 5e10),
        (1.0, 13.5, (1.2, 0.95, 1.0), 2e11, 5e10),
        (1.0, 13.5, (1.2, 1.05, 1.0), 2e11, 5e10),
        (1.0, 10.5, (1.5, 1.0, 1.0), 2e11, 5e10),
        (1.0, 10.5, (1.2, 0.95, 1.0), 2e11, 5e10),
        (1.0, 13.5, (1.0, 1.0, 1.0), 2e11, 5e10),
        (1.0, 10.5, (1.0, 1.0, 1.0), 2e11, 5e10),
    ]
    for alpha, s, w, lm, ceil_ in grids:
        t0 = time.time()
        cfg = build(slot, alpha, s, w, lm, ceil_)
        rows = probe(cfg)
        show(f"a={alpha} s={s} w={w} lm={lm:g}", rows)
