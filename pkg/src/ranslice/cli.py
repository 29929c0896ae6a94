"""Command-line entry point.

Subcommands::

    ranslice solve-exact --config scenario.yaml [--out values.csv]
    ranslice learn       --config scenario.yaml [--max-iterations N] ...
    ranslice sweep       --config scenario.yaml --kind subchannels ...
    ranslice compare     --config scenario.yaml [--seeds N] ...

Exit codes: 0 success (including a learn run that stops on budget),
2 usage or scenario-validation failure, 3 enumeration cap exceeded,
4 solver non-convergence, 5 I/O failure.  Flags override scenario-file
values, which override built-in defaults.  Machine-readable output is
CSV; human summaries and the reproducibility manifest go to stdout.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import exact, learning, simharness
from .config import Multipliers, load_scenario
from .errors import CapExceededError, ConfigError, ConvergenceError
from .simharness import POLICY_NAMES


def _parse_eta(text, num_slices):
    if text is None:
        return np.zeros(num_slices)
    values = [float(v) for v in text.split(",")]
    if len(values) == 1:
        values = values * num_slices
    if len(values) != num_slices:
        raise ConfigError(
            f"--eta needs 1 or {num_slices} comma-separated values"
        )
    return np.asarray(values)


def _print_manifest(config_path, extra):
    manifest = {"config_path": str(config_path),
                "config_sha256": simharness.config_hash(config_path)}
    manifest.update(extra)
    from . import __version__

    manifest["package_version"] = __version__
    print("manifest: " + json.dumps(manifest, sort_keys=True))


def cmd_solve_exact(args):
    config = load_scenario(args.config)
    eta = _parse_eta(args.eta, config.num_slices)
    multipliers = Multipliers(values=eta, floor=0.0,
                              ceiling=max(100.0, float(eta.max(initial=0.0))))
    solution = exact.solve_instance(
        config,
        multipliers=multipliers,
        tol=args.tolerance,
        max_iter=args.max_iter,
        cap=args.state_cap,
        reduced=args.reduced,
    )
    print(f"theta: {solution.table.theta!r}")
    print(f"states: {solution.space.size}  actions: {len(solution.kernel.actions)}  "
          f"sweeps: {solution.table.iterations}")
    if args.out:
        space = solution.space
        table = solution.table
        actions = solution.kernel.actions
        if args.reduced:
            exact.export_solution(args.out, space, table, actions)
        else:
            exact.export_solution(args.out, space, table, actions)
        print(f"values written to {args.out}")
    _print_manifest(args.config, {
        "command": "solve-exact",
        "eta": list(map(float, eta)),
        "tolerance": args.tolerance,
        "reduced": bool(args.reduced),
    })
    return 0


def cmd_learn(args):
    config = load_scenario(args.config)
    schedule = config.schedule
    overrides = {}
    for flag in ("q_step_scale", "q_step_decay", "lm_step_scale", "lm_step_decay",
                 "lm_floor", "lm_ceiling", "q_tolerance", "lm_tolerance"):
        value = getattr(args, flag)
        if value is not None:
            overrides[flag] = value
    if overrides:
        schedule = dataclasses.replace(schedule, **overrides)
        schedule.validate()
    if args.resume:
        learner = learning.load_checkpoint(args.resume, config, schedule)
        print(f"resumed from {args.resume} at slot {learner.slot}")
    else:
        learner = learning.init(config, schedule)
    env = simharness.Environment(
        config,
        channel_rng=simharness.derive_rng(args.seed, "train", "channel"),
        arrival_rng=simharness.derive_rng(args.seed, "train", "arrivals"),
    )
    budget = args.max_iterations
    result = learning.run_online(env, learner, max_iterations=budget)
    if result.stopped == "budget":
        print("notice: stopped on iteration budget before reaching tolerances")
    eta = ", ".join(f"{v:.6g}" for v in learner.multipliers.values)
    print(f"slots run: {len(result.trace)}  final slot: {learner.slot}")
    print(f"final multipliers: [{eta}]")
    print(f"reward estimate: {learner.reward_estimate:.6g} bit/s")
    if args.trace_out:
        columns = list(result.trace[0].keys()) if result.trace else None
        simharness.write_csv(args.trace_out, result.trace, columns)
        print(f"trace written to {args.trace_out}")
    if args.checkpoint_out:
        learning.save_checkpoint(learner, args.checkpoint_out)
        print(f"checkpoint written to {args.checkpoint_out}")
    _print_manifest(args.config, {
        "command": "learn",
        "seed": args.seed,
        "max_iterations": budget,
        "resumed_from": args.resume,
    })
    return 0


def _parse_policies(text):
    names = tuple(p.strip() for p in text.split(",") if p.strip())
    for name in names:
        if name not in POLICY_NAMES:
            raise ConfigError(
                f"unknown policy {name!r}; valid names: {', '.join(POLICY_NAMES)}"
            )
    return names


def cmd_sweep(args):
    config = load_scenario(args.config)
    policies = _parse_policies(args.policies)
    seeds = list(range(args.seeds))
    if args.values:
        values = [float(v) for v in args.values.split(",")]
    else:
        values = {
            "subchannels": [2, 4, 6],
            "battery": [4, 6, 8, 10],
            "arrival": [1, 2, 3, 4, 5, 6],
        }[args.kind]
    sweep_fn = {
        "subchannels": simharness.sweep_subchannels,
        "battery": simharness.sweep_battery,
        "arrival": simharness.sweep_arrival,
    }[args.kind]
    if args.kind == "subchannels":
        values = [int(v) for v in values]
    rows, means = sweep_fn(
        config, policies, values, seeds,
        horizon=args.horizon, train_slots=args.train_slots,
    )
    import os

    os.makedirs(args.out_dir, exist_ok=True)
    rows_path = os.path.join(args.out_dir, f"{args.kind}.csv")
    means_path = os.path.join(args.out_dir, f"{args.kind}_means.csv")
    simharness.write_csv(rows_path, rows)
    simharness.write_csv(means_path, means)
    manifest_path = os.path.join(args.out_dir, "manifest.json")
    simharness.write_manifest(manifest_path, {
        "command": "sweep",
        "kind": args.kind,
        "config_path": str(args.config),
        "config_sha256": simharness.config_hash(args.config),
        "policies": list(policies),
        "values": values,
        "seeds": seeds,
        "horizon": args.horizon,
        "train_slots": args.train_slots,
    })
    print(f"rows written to {rows_path}")
    print(f"means written to {means_path}")
    print(f"manifest written to {manifest_path}")
    return 0


def cmd_compare(args):
    config = load_scenario(args.config)
    policies = _parse_policies(args.policies)
    eta = _parse_eta(args.eta, config.num_slices)
    if args.horizon < 1000:
        print("warning: short horizon; averages will be noisy")
    seeds = list(range(args.seeds))
    names = list(policies)
    if args.with_oracle != "no" and "oracle" not in names:
        try:
            exact.enumerate_states(config)
            names.append("oracle")
        except CapExceededError as exc:
            if args.with_oracle == "yes":
                raise
            print(f"notice: oracle row omitted ({exc})")
    table = {}
    for name in names:
        per_seed = []
        for seed in seeds:
            policy = simharness.make_policy(
                name, config, seed, train_slots=args.train_slots
            )
            metrics = simharness.run_episode(
                policy, config, seed, horizon=args.horizon
            )
            lagrangian = metrics.weighted_sum_rate - float(
                eta @ (metrics.per_slice_delay
                       - np.asarray([sl.max_delay for sl in config.slices]))
            )
            per_seed.append((metrics, lagrangian))
        table[name] = per_seed
    header = ["policy", "weighted_rate", "lagrangian"]
    for sl in config.slices:
        header += [f"rate_{sl.name}", f"drop_{sl.name}", f"delay_{sl.name}"]
    print("  ".join(f"{h:>16s}" for h in header))
    for name in names:
        per_seed = table[name]
        wsr = np.mean([m.weighted_sum_rate for m, _ in per_seed])
        lag = np.mean([l for _, l in per_seed])
        cells = [f"{name:>16s}", f"{wsr:16.6g}", f"{lag:16.6g}"]
        for m_idx in range(config.num_slices):
            rate = np.mean([m.per_slice_rate[m_idx] for m, _ in per_seed])
            drop = np.mean([m.per_slice_drop[m_idx] for m, _ in per_seed])
            delay = np.mean([m.per_slice_delay[m_idx] for m, _ in per_seed])
            cells += [f"{rate:16.6g}", f"{drop:16.6g}", f"{delay:16.6g}"]
        print("  ".join(cells))
    _print_manifest(args.config, {
        "command": "compare",
        "policies": names,
        "seeds": seeds,
        "horizon": args.horizon,
        "eta": list(map(float, eta)),
    })
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ranslice",
        description="Uplink slicing resource-allocation solvers and simulations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-exact", help="value-iterate a desk-scale instance")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="CSV of (state index, value, greedy action)")
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=20000)
    p.add_argument("--state-cap", type=int, default=exact.STATE_CAP_DEFAULT)
    p.add_argument("--eta", help="per-slice multipliers, comma separated")
    p.add_argument("--reduced", action="store_true",
                   help="solve the channel-averaged recursion")
    p.set_defaults(func=cmd_solve_exact)

    p = sub.add_parser("learn", help="run the online learning loop")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--trace-out", help="CSV convergence trace")
    p.add_argument("--checkpoint-out", help="table checkpoint file")
    p.add_argument("--resume", help="checkpoint to continue from")
    for flag in ("q-step-scale", "q-step-decay", "lm-step-scale", "lm-step-decay",
                 "lm-floor", "lm-ceiling", "q-tolerance", "lm-tolerance"):
        p.add_argument(f"--{flag}", type=float, default=None,
                       dest=flag.replace("-", "_"))
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("sweep", help="figure-reproduction parameter sweeps")
    p.add_argument("--config", required=True)
    p.add_argument("--kind", required=True,
                   choices=("subchannels", "battery", "arrival"))
    p.add_argument("--policies", default="proposed,qsi,random")
    p.add_argument("--values", help="comma-separated sweep values")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--horizon", type=int, default=10000)
    p.add_argument("--train-slots", type=int,
                   default=simharness.DEFAULT_TRAIN_SLOTS)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="policy comparison table")
    p.add_argument("--config", required=True)
    p.add_argument("--policies", default="proposed,qsi,random")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--horizon", type=int, default=20000)
    p.add_argument("--train-slots", type=int,
                   default=simharness.DEFAULT_TRAIN_SLOTS)
    p.add_argument("--eta", help="multipliers for the Lagrangian column")
    p.add_argument("--with-oracle", choices=("auto", "yes", "no"), default="auto")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CapExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
