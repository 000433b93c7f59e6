"""Experiment driver: baselines, training, evaluation and CSV reports."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .case import Network
from .ddpg import DDPGAgent
from .env import CascadeEnv, EnvConfig, Verdict
from .policies import make_baseline

__all__ = [
    "RunReport",
    "episode_seeds",
    "agent_for",
    "run_episodes",
    "run_baseline",
    "train",
    "evaluate",
    "moving_average",
    "write_report",
    "read_report",
    "write_summary",
    "write_moving_average",
    "write_trace",
    "REPORT_COLUMNS",
]

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("episode", "seed", "verdict", "total_reward", "stages")
TRAIN_STREAM, EVAL_STREAM = 0, 1


def episode_seeds(seed: int, n: int, stream: int = EVAL_STREAM) -> list[int]:
    """Attack seeds for ``n`` episodes; training and evaluation use separate streams."""
    return [int(np.random.SeedSequence([seed, stream, i]).generate_state(1)[0]) for i in range(n)]


def moving_average(values, window: int) -> np.ndarray:
    """Trailing mean over ``window`` values; the first entries average what exists."""
    v = np.asarray(values, dtype=float)
    if window < 1:
        raise ValueError("window must be >= 1")
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


@dataclass
class RunReport:
    rows: list[dict]
    window: int = 50
    meta: dict = field(default_factory=dict)

    @property
    def episodes(self) -> int:
        return len(self.rows)

    @property
    def wins(self) -> int:
        return sum(1 for r in self.rows if r["verdict"] == Verdict.WIN.value)

    @property
    def win_rate(self) -> float:
        return self.wins / self.episodes if self.rows else 0.0

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r["total_reward"] for r in self.rows], dtype=float)

    @property
    def mean_reward(self) -> float:
        return float(self.rewards.mean()) if self.rows else 0.0

    def moving_average(self) -> np.ndarray:
        return moving_average(self.rewards, self.window)


def agent_for(net: Network, **overrides) -> DDPGAgent:
    """Agent with the default hidden sizes for the grid's size."""
    hidden = (128, 128) if net.n_bus <= 50 else (256, 256)
    params = {"hidden_sizes": hidden, **overrides}
    return DDPGAgent(**params)


def run_episodes(policy, env: CascadeEnv, seeds, trace=None, learn=False) -> list[dict]:
    """Roll ``policy`` (anything with ``act(obs)``) over one episode per seed.

    ``trace`` (a list) collects the per-stage history rows.  With ``learn``
    the policy must be a :class:`DDPGAgent`; transitions go to its replay
    buffer and it keeps training.
    """
    rows = []
    for ep, seed in enumerate(seeds):
        obs = env.reset(seed=seed)
        total, stages = 0.0, 0
        while True:
            action = policy.act(obs)
            out = env.step(action)
            if learn:
                policy.buffer_.add(obs, action, policy.reward_scale * out.reward, out.observation, out.done)
                if len(policy.buffer_) >= policy.batch_size:
                    policy.train_step()
            total += out.reward
            stages += 1
            obs = out.observation
            if out.done:
                break
        if trace is not None:
            for h in env.history:
                trace.append({"episode": ep, "seed": seed, **h})
        rows.append(
            {"episode": ep, "seed": int(seed), "verdict": out.verdict.value, "total_reward": total, "stages": stages}
        )
    return rows


def _meta(env_cfg, net, **kw):
    return {"case": net.name, "preset": env_cfg.name, **kw}


def run_baseline(kind, env_cfg: EnvConfig, net: Network, episodes: int, seed: int, window=50, trace=None):
    """Win rate and rewards of a fixed dispatch rule (``random``, ``max`` or ``half``)."""
    env = CascadeEnv(net, env_cfg)
    policy = make_baseline(kind, seed).fit(env)
    rows = run_episodes(policy, env, episode_seeds(seed, episodes), trace=trace)
    meta = _meta(env_cfg, net, policy=kind, attack_seed=seed, policy_seed=seed if kind == "random" else "")
    return RunReport(rows, window, meta)


def train(env_cfg: EnvConfig, net: Network, train_episodes=300, seed=0, agent=None, window=50,
          init_seed=None, explore_seed=None, callback=None):
    """Train a DDPG agent; returns ``(agent, report)``.

    ``init_seed`` and ``explore_seed`` default to ``seed`` and ``seed + 1``.
    With zero episodes the agent is only initialised.
    """
    init_seed = seed if init_seed is None else init_seed
    explore_seed = seed + 1 if explore_seed is None else explore_seed
    if agent is None:
        agent = agent_for(net)
    agent.set_params(init_seed=init_seed, explore_seed=explore_seed)
    env = CascadeEnv(net, env_cfg)
    seeds = episode_seeds(seed, train_episodes, TRAIN_STREAM)
    agent.fit(env, train_episodes, seeds=seeds, callback=callback)
    rows = [{k: r[k] for k in REPORT_COLUMNS} for r in agent.training_rows_]
    meta = _meta(env_cfg, net, policy="ddpg", mode="train", attack_seed=seed,
                 init_seed=init_seed, explore_seed=explore_seed)
    return agent, RunReport(rows, window, meta)


def evaluate(agent: DDPGAgent, env_cfg: EnvConfig, net: Network, eval_episodes=1000, seed=0,
             window=50, online=False, trace=None):
    """Noise-free rollouts of a trained agent (``online`` keeps training)."""
    env = CascadeEnv(net, env_cfg)
    if agent.obs_dim_ != env.obs_dim or agent.action_dim_ != env.action_dim:
        raise ValueError(
            f"checkpoint expects obs/action dims {agent.obs_dim_}/{agent.action_dim_}, "
            f"case gives {env.obs_dim}/{env.action_dim}"
        )
    rows = run_episodes(agent, env, episode_seeds(seed, eval_episodes), trace=trace, learn=online)
    meta = _meta(env_cfg, net, policy="ddpg", mode="online" if online else "eval", attack_seed=seed,
                 init_seed=agent.init_seed, explore_seed=agent.explore_seed)
    return RunReport(rows, window, meta)


# -- CSV i/o ---------------------------------------------------------------------

def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def _header(meta, window):
    lines = [f"# {k} = {v}" for k, v in sorted(meta.items())]
    lines.append(f"# window = {window}")
    return "\n".join(lines) + "\n"


def write_report(report: RunReport, path):
    """Per-episode rows preceded by ``# key = value`` metadata lines."""
    buf = io.StringIO()
    buf.write(_header(report.meta, report.window))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in report.rows:
        w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_report(path) -> RunReport:
    meta, data = {}, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].partition("=")
            meta[k.strip()] = v.strip()
        elif line:
            data.append(line)
    rows = []
    for rec in csv.DictReader(data):
        rows.append(
            {
                "episode": int(rec["episode"]),
                "seed": int(rec["seed"]),
                "verdict": rec["verdict"],
                "total_reward": float(rec["total_reward"]),
                "stages": int(rec["stages"]),
            }
        )
    window = int(meta.pop("window", 50))
    return RunReport(rows, window, meta)


def write_summary(reports: dict, path):
    """One line per labelled report: episodes, wins, win rate, mean reward."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "case", "episodes", "wins", "win_rate", "mean_reward"])
    for label, rep in reports.items():
        w.writerow([label, rep.meta.get("case", ""), rep.episodes, rep.wins, _fmt(rep.win_rate), _fmt(rep.mean_reward)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_moving_average(report: RunReport, path):
    buf = io.StringIO()
    buf.write(f"# window = {report.window}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "total_reward", "ma_reward"])
    for r, ma in zip(report.rows, report.moving_average()):
        w.writerow([r["episode"], _fmt(float(r["total_reward"])), _fmt(float(ma))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


TRACE_COLUMNS = ("episode", "seed", "stage", "attacked", "tripped", "islands", "available_islands",
                 "cost_term", "loss_term", "convergence_term", "win_term", "reward", "verdict")


def write_trace(trace_rows, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in trace_rows:
        w.writerow([_fmt(r[c]) for c in TRACE_COLUMNS])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
