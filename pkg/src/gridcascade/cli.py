"""``gridcascade`` command line.

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .case import CaseFormatError, load_case, validate
from .ddpg import DDPGAgent, NumericalAbort
from .env import CascadeEnv, ConfigError, load_env_config, preset
from .powerflow import PfOptions, solve_base_case
from .topology import assess_islands, detect_islands

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


def _env_and_case(args):
    if args.env_config:
        cfg = load_env_config(args.env_config)
    else:
        cfg = preset(args.env_preset)
    case = args.case or cfg.name or args.env_preset
    net = load_case(case)
    problems = validate(net)
    if problems:
        raise UsageError("invalid case: " + "; ".join(problems))
    return cfg, net


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_outputs(out, label, report, trace=None):
    harness.write_report(report, out / "report.csv")
    harness.write_summary({label: report}, out / "summary.csv")
    harness.write_moving_average(report, out / "ma_reward.csv")
    if trace is not None:
        harness.write_trace(trace, out / "trace.csv")


def cmd_train(args):
    cfg, net = _env_and_case(args)
    agent = harness.agent_for(net)
    if args.hidden:
        agent.set_params(hidden_sizes=tuple(int(h) for h in args.hidden.split(",")))
    out = _out_dir(args.out)

    def progress(ep, row):
        if (ep + 1) % 25 == 0:
            logging.info("episode %d/%d %s reward %.1f", ep + 1, args.episodes, row["verdict"], row["total_reward"])

    agent, report = harness.train(cfg, net, args.episodes, args.seed, agent=agent, window=args.window,
                                  init_seed=args.init_seed, explore_seed=args.explore_seed, callback=progress)
    agent.save(out / "checkpoint.zip")
    _write_outputs(out, "ddpg-train", report)
    print(f"trained {args.episodes} episodes, training win rate {report.win_rate:.4f}; wrote {out}")
    if args.eval_episodes:
        rep = harness.evaluate(agent, cfg, net, args.eval_episodes, args.seed, window=args.window)
        eval_dir = _out_dir(out / "eval")
        _write_outputs(eval_dir, "ddpg", rep)
        print(f"evaluation win rate {rep.win_rate:.4f} over {rep.episodes} episodes")
    return 0


def cmd_eval(args):
    cfg, net = _env_and_case(args)
    try:
        agent = DDPGAgent.load(args.checkpoint)
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    trace = [] if args.trace else None
    try:
        report = harness.evaluate(agent, cfg, net, args.episodes, args.seed, window=args.window,
                                  online=args.online, trace=trace)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args.out)
    _write_outputs(out, "ddpg", report, trace)
    print(f"win rate {report.win_rate:.4f} over {report.episodes} episodes, mean reward {report.mean_reward:.2f}")
    return 0


def cmd_baseline(args):
    cfg, net = _env_and_case(args)
    trace = [] if args.trace else None
    report = harness.run_baseline(args.policy, cfg, net, args.episodes, args.seed, window=args.window, trace=trace)
    out = _out_dir(args.out)
    _write_outputs(out, args.policy, report, trace)
    print(f"{args.policy}: win rate {report.win_rate:.4f} over {report.episodes} episodes, "
          f"mean reward {report.mean_reward:.2f}")
    return 0


def cmd_powerflow(args):
    net = load_case(args.case)
    problems = validate(net)
    if problems:
        raise UsageError("invalid case: " + "; ".join(problems))
    try:
        sol = solve_base_case(net, PfOptions(tol_mismatch=args.tol), flat_start=args.flat_start)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["bus", "vm_pu", "va_deg", "p_mw", "q_mvar"])
    for i, b in enumerate(sol.buses):
        w.writerow([net.buses[b].id, f"{sol.v_mag[i]:.8f}", f"{math.degrees(sol.v_ang[i]):.8f}",
                    f"{sol.p_inj[i]:.6f}", f"{sol.q_inj[i]:.6f}"])
    print(f"# converged = {str(sol.converged).lower()}, iterations = {sol.iterations}, slack_p_mw = {sol.slack_p:.6f}")
    if not sol.converged:
        print(f"power flow failed: {sol.reason}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


def cmd_islands(args):
    net = load_case(args.case)
    cfg = load_env_config(args.env_config) if args.env_config else preset(args.env_preset)
    mask = np.array([br.in_service for br in net.branches], dtype=bool)
    for label in filter(None, (s.strip() for s in (args.out_lines or "").split(","))):
        try:
            mask[net.find_branch(label)] = False
        except (KeyError, ValueError):
            raise UsageError(f"no branch {label!r} in case") from None
    env = CascadeEnv(net, cfg)
    env.reset()
    env.branch_on = mask
    p_set = np.array([g.p_gen for g in net.generators])
    partition = detect_islands(net, mask)
    _, results = env.solve_islands(p_set)
    assessments = assess_islands(partition, net, p_set, results, env.gen_on, cfg.rules)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["island", "buses", "available", "reason", "max_gen_total", "gen_total", "load_total", "converged"])
    for a, isl in zip(assessments, partition.islands):
        w.writerow([a.island_id, " ".join(str(net.buses[i].id) for i in isl), str(a.available).lower(),
                    a.reason.value, f"{a.max_gen_total:.3f}", f"{a.gen_total:.3f}", f"{a.load_total:.3f}",
                    str(a.converged).lower()])
    return 0


def _add_env_args(p, with_case=True):
    if with_case:
        p.add_argument("--case", help="case file or builtin name (default: the preset's grid)")
    p.add_argument("--env-preset", choices=["ieee14", "ieee118"], default="ieee14")
    p.add_argument("--env-config", help="key = value environment config file (overrides --env-preset)")
    p.add_argument("--seed", type=int, default=0, help="attack seed stream")
    p.add_argument("--window", type=int, default=50, help="moving-average window")
    p.add_argument("--out", default="out")


def build_parser():
    parser = argparse.ArgumentParser(prog="gridcascade", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a DDPG dispatch agent")
    _add_env_args(p)
    p.add_argument("--episodes", type=int, default=300)
    p.add_argument("--eval-episodes", type=int, default=0, help="evaluate right after training")
    p.add_argument("--init-seed", type=int, help="weight initialisation seed (default: --seed)")
    p.add_argument("--explore-seed", type=int, help="exploration seed (default: --seed + 1)")
    p.add_argument("--hidden", help="hidden layer sizes, e.g. 128,128")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained checkpoint")
    _add_env_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--online", action="store_true", help="keep training while evaluating")
    p.add_argument("--trace", action="store_true", help="also write per-stage trace.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="run a fixed dispatch baseline")
    _add_env_args(p)
    p.add_argument("--policy", choices=["random", "max", "half"], required=True)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--trace", action="store_true", help="also write per-stage trace.csv")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("powerflow", help="solve the base case and print bus results as CSV")
    p.add_argument("case")
    p.add_argument("--flat-start", action="store_true", help="ignore the case's initial voltages")
    p.add_argument("--tol", type=float, default=1e-8, help="max mismatch, p.u.")
    p.set_defaults(func=cmd_powerflow)

    p = sub.add_parser("islands", help="island partition and availability after line outages")
    p.add_argument("case")
    p.add_argument("--out-lines", default="", help="comma-separated branches to open, e.g. 4-5,2-4")
    p.add_argument("--env-preset", choices=["ieee14", "ieee118"], default="ieee14")
    p.add_argument("--env-config")
    p.set_defaults(func=cmd_islands)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CaseFormatError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalAbort, RuntimeError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
