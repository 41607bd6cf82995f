"""Command line entry point: ``nstepac train|compare|diagnose|plot|selftest``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import selftest
from .agents import Agent
from .diagnostics import CsvLog, estimate_bias, online_offline_gap, record_target_gaps
from .envs import make_env
from .errors import NstepacError
from .harness import (
    METRICS,
    ExperimentConfig,
    compare,
    emit_plots,
    format_table,
    load_config,
    run_experiment,
)
from .replay import ReplayBuffer

log = logging.getLogger("nstepac")


def _cmd_train(args) -> int:
    overrides = list(args.override or [])
    if args.seed_list:
        overrides.append(f"seeds={args.seed_list}")
    if args.output_dir:
        overrides.append(f"output_dir={args.output_dir}")
    config = ExperimentConfig.from_file(args.config, overrides)
    summary = run_experiment(config)
    print(f"{summary.variant} on {summary.env_id}: max average return "
          f"{summary.max_avg_return:.3f} +- {summary.max_avg_return_std:.3f}, "
          f"final bias {summary.final_bias_mean:.3f}")
    print(f"outputs in {config.resolved_output_dir()}")
    return 0


def _cmd_compare(args) -> int:
    rows = compare(args.runs, args.metric)
    print(format_table(rows, args.metric))
    return 0


def _collect_buffer(agent: Agent, env_id: str, steps: int, seed: int, store_states: bool) -> ReplayBuffer:
    env = make_env(env_id, seed=seed)
    buf = ReplayBuffer(max(steps, 1), env.spec.obs_dim, env.spec.act_dim, store_states)
    rng = np.random.default_rng(seed)
    warm = agent.config.warmup_steps
    agent.config.warmup_steps = 0
    agent.config.update_every = steps + 1  # collect only
    try:
        for _ in range(steps):
            agent.train_step(buf, env, rng)
    finally:
        agent.config.warmup_steps = warm
    return buf


def _cmd_diagnose(args) -> int:
    run_dir = Path(args.run)
    config = load_config(run_dir)
    seed_dirs = sorted(p for p in run_dir.iterdir() if p.is_dir() and p.name.startswith("seed_"))
    if not seed_dirs:
        raise NstepacError(f"{run_dir} has no seed directories")
    out = CsvLog(run_dir / f"diagnose_{args.suite}.csv",
                 ["seed", "quantity", "value"], f"diagnose_{args.suite}")
    for d in seed_dirs:
        seed = int(d.name.split("_", 1)[1])
        agent = Agent.load(d / "agent.ckpt")
        rng = np.random.default_rng(seed)
        if args.suite == "bias":
            env = make_env(config.env_id, seed=seed)
            be = estimate_bias(agent, env, args.probes, config.bias_horizon, rng)
            rows = {"mean_predicted_q": be.mean_predicted_q, "mean_mc_return": be.mean_mc_return, "bias": be.bias}
        elif args.suite == "gaps":
            buf = _collect_buffer(agent, config.env_id, args.steps, seed, False)
            tg = record_target_gaps(agent, buf.sample_batch(args.batch, config.gap_max_n, rng), config.gap_max_n)
            rows = {f"gap_1_{i}": v for i, v in tg.gaps.items() if i > 1}
            rows.update(mix_avg=tg.mix_avg, mix_min=tg.mix_min)
        else:
            buf = _collect_buffer(agent, config.env_id, args.steps, seed, True)
            env = make_env(config.env_id, seed=seed)
            n = config.online_offline_n
            off, on, gap = online_offline_gap(agent, env, buf.sample_n(args.batch, n, rng), n)
            rows = {"offline": off, "online": on, "gap": gap}
        for k, v in rows.items():
            out.append(seed=seed, quantity=k, value=v)
            print(f"seed {seed:>4}  {k:<18} {v: .6f}")
    out.flush()
    return 0


def _cmd_plot(args) -> int:
    for path in emit_plots(args.runs, args.out):
        print(path)
    return 0


def _cmd_selftest(args) -> int:
    return 0 if selftest.run(args.seed) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nstepac", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a seeded experiment from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed-list", help="comma-separated seeds, overrides the config")
    t.add_argument("--override", action="append", metavar="KEY=VAL",
                   help="override any experiment or agent field (repeatable)")
    t.add_argument("--output-dir")
    t.set_defaults(func=_cmd_train)

    c = sub.add_parser("compare", help="tabulate a metric across finished runs")
    c.add_argument("--runs", nargs="+", required=True)
    c.add_argument("--metric", choices=METRICS, default="max_avg_return")
    c.set_defaults(func=_cmd_compare)

    d = sub.add_parser("diagnose", help="run a diagnostic suite on a finished run")
    d.add_argument("--run", required=True)
    d.add_argument("--suite", choices=("gaps", "bias", "online-offline"), required=True)
    d.add_argument("--steps", type=int, default=2000, help="fresh transitions to collect")
    d.add_argument("--batch", type=int, default=64)
    d.add_argument("--probes", type=int, default=20)
    d.set_defaults(func=_cmd_diagnose)

    pl = sub.add_parser("plot", help="write SVG curves for runs")
    pl.add_argument("--runs", nargs="+", required=True)
    pl.add_argument("--out", default="plots")
    pl.set_defaults(func=_cmd_plot)

    s = sub.add_parser("selftest", help="run the built-in oracle checks")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_selftest)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NstepacError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
