"""Multi-stage cascading-failure environment.

Each ``step`` is one stage: the agent's generation coefficients are
applied, one line is knocked out, and overloaded lines keep tripping until
the flows settle.  Islands that cannot carry on are dropped for the rest of
the episode.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .case import BusKind, Network
from .powerflow import PfOptions, build_admittance, generation_cost, island_problem, line_loading, solve_island
from .topology import AvailabilityRules, assess_islands, detect_islands

__all__ = [
    "EnvConfig",
    "ConfigError",
    "load_env_config",
    "preset",
    "Verdict",
    "RewardBreakdown",
    "StepOutcome",
    "compute_reward",
    "CascadeEnv",
    "EpisodeFinished",
]


class ConfigError(ValueError):
    pass


class EpisodeFinished(RuntimeError):
    """``step`` was called after the episode ended."""


@dataclass(frozen=True)
class EnvConfig:
    stage_max: int = 3
    line_limit: float = 200.0
    c1: float = 0.03
    c2: float = 1.7
    base_reward_1: float = 2000.0
    base_reward_2: float = 1000.0
    base_reward_3: float = 2000.0
    attack_seed: int = 0
    # availability checks
    check_generator: bool = True
    check_capacity: bool = True
    check_convergence: bool = True
    check_slack_limits: bool = True
    check_dispatch_cover: bool = False
    # False: the stage's attack lands before the agent sees the state
    act_then_attack: bool = True
    # branch labels ("4-5") struck in order, one per stage, instead of random picks
    attack_script: tuple = ()
    tol_mismatch: float = 1e-8
    max_iter: int = 20
    enforce_q_limits: bool = True
    name: str = ""

    def __post_init__(self):
        if self.stage_max < 1:
            raise ConfigError(f"stage_max must be >= 1, got {self.stage_max}")
        if not self.line_limit > 0:
            raise ConfigError(f"line_limit must be positive, got {self.line_limit}")
        if not self.c2 > 0:
            raise ConfigError(f"c2 must be positive, got {self.c2}")

    @property
    def rules(self) -> AvailabilityRules:
        return AvailabilityRules(
            require_generator=self.check_generator,
            capacity=self.check_capacity,
            convergence=self.check_convergence,
            slack_limits=self.check_slack_limits,
            dispatch_cover=self.check_dispatch_cover,
        )

    @property
    def pf_options(self) -> PfOptions:
        return PfOptions(self.tol_mismatch, self.max_iter, self.enforce_q_limits)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, tuple):
                v = ",".join(v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def parse_env_config(text: str, **overrides) -> EnvConfig:
    """Read ``key = value`` lines (``#`` comments) into an :class:`EnvConfig`."""
    types = {f.name: f.type for f in dataclasses.fields(EnvConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (s.strip() for s in line.partition("="))
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown setting {key!r}")
        kind = types[key]
        try:
            if kind == "bool":
                values[key] = _BOOL[val.lower()]
            elif kind == "int":
                values[key] = int(val)
            elif kind == "float":
                values[key] = float(val)
            elif kind == "tuple":
                values[key] = tuple(s.strip() for s in val.split(",") if s.strip())
            else:
                values[key] = val
        except (KeyError, ValueError):
            raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
    values.update(overrides)
    return EnvConfig(**values)


def load_env_config(path, **overrides) -> EnvConfig:
    """Config from a file, or a shipped preset by name (``ieee14``, ``ieee118``)."""
    p = Path(path)
    if not p.exists() and str(path) in _PRESETS:
        return preset(str(path), **overrides)
    return parse_env_config(p.read_text(encoding="utf-8"), **overrides)


_PRESETS = ("ieee14", "ieee118")


def preset(name: str, **overrides) -> EnvConfig:
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {list(_PRESETS)}")
    text = resources.files("gridcascade.data").joinpath(f"{name}.env").read_text(encoding="utf-8")
    return parse_env_config(text, **overrides)


class Verdict(str, enum.Enum):
    ONGOING = "Ongoing"
    WIN = "Win"
    LOSE = "Lose"


@dataclass(frozen=True)
class RewardBreakdown:
    cost_term: float
    loss_term: float
    convergence_term: float
    win_term: float

    @property
    def total(self) -> float:
        return self.cost_term + self.loss_term + self.convergence_term + self.win_term


def compute_reward(assessments, verdict, cfg: EnvConfig, *, cost, p_total, p_discarded=0.0):
    """The four reward terms for one stage.

    ``cost`` is the generation cost ($) over available islands and
    ``p_discarded`` the load (MW) on buses dropped in earlier stages, which
    still counts as lost.
    """
    if not p_total > 0:
        raise ValueError("p_total must be positive")
    p_avail = math.fsum(a.load_total for a in assessments if a.available)
    p_loss = p_discarded + math.fsum(a.load_total for a in assessments if not a.available)
    n = len(assessments)
    n_conv = sum(1 for a in assessments if a.converged)
    cost_term = -cfg.c1 * cost
    loss_term = -cfg.base_reward_1 * (p_loss / p_total)
    convergence_term = cfg.base_reward_2 if n > 0 and n_conv >= math.ceil(n / 2) else 0.0
    win_term = cfg.base_reward_3 * (p_avail / p_total) ** cfg.c2 if verdict == Verdict.WIN else 0.0
    return RewardBreakdown(cost_term, loss_term, convergence_term, win_term)


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    reward_breakdown: RewardBreakdown
    done: bool
    verdict: Verdict
    info: dict = field(default_factory=dict)


class CascadeEnv:
    """Stateful environment over one :class:`~gridcascade.case.Network`.

    Observations are flat float arrays: one loading fraction per branch,
    then ``(P MW, Q MVAr, V p.u., angle rad)`` for every bus.  Actions are
    one coefficient in [0, 1] per generator.
    """

    def __init__(self, net: Network, cfg: EnvConfig | None = None):
        self.net = net
        self.cfg = cfg or EnvConfig()
        self.obs_dim = net.n_branch + 4 * net.n_bus
        self.action_dim = net.n_gen
        self._p_max = np.array([g.p_max for g in net.generators])
        self._gen_bus = np.array([net.bus_index(g.bus) for g in net.generators])
        self._case_slack_buses = {i for i, b in enumerate(net.buses) if b.kind == BusKind.SLACK}
        self._script = [net.find_branch(lbl) for lbl in self.cfg.attack_script]
        self.p_total = net.total_load
        self.done = True
        self.history: list[dict] = []

    # -- episode control -------------------------------------------------
    def reset(self, seed=None) -> np.ndarray:
        net = self.net
        self.episode_seed = self.cfg.attack_seed if seed is None else seed
        rng = np.random.default_rng(self.episode_seed)
        # strike order: first still-energised branch of a uniform random permutation
        self._attack_order = list(self._script) + [int(k) for k in rng.permutation(net.n_branch)]
        self.branch_on = np.array([br.in_service for br in net.branches], dtype=bool)
        self.bus_alive = np.ones(net.n_bus, dtype=bool)
        self.gen_on = np.array([g.in_service for g in net.generators], dtype=bool)
        self.stage = 0
        self.done = False
        self.history = []
        self._pending_attack = None
        self.p_set = np.array([g.p_gen for g in net.generators], dtype=float)
        partition, results = self.solve_islands(self.p_set)
        if not all(r is not None and r.converged for r in results):
            raise RuntimeError("base case power flow did not converge")
        self.partition, self.results = partition, results
        self.available = np.ones(len(partition), dtype=bool)
        if not self.cfg.act_then_attack:
            self._pending_attack = self._attack()
            self.partition, self.results = self.solve_islands(self.p_set)
            self.available = np.array([r is not None and r.converged for r in self.results], dtype=bool)
        return self.observe()

    def step(self, action) -> StepOutcome:
        if self.done:
            raise EpisodeFinished("episode is over; call reset()")
        net, cfg = self.net, self.cfg
        a = np.asarray(action, dtype=float).reshape(-1)
        if a.shape != (net.n_gen,):
            raise ValueError(f"action has {a.size} entries, expected {net.n_gen}")
        a = np.clip(np.nan_to_num(a, nan=0.0), 0.0, 1.0)
        self.p_set = a * self._p_max

        if cfg.act_then_attack:
            attacked = self._attack()
        else:
            attacked, self._pending_attack = self._pending_attack, None
        tripped = []
        for _ in range(net.n_branch + 1):
            partition, results = self.solve_islands(self.p_set)
            over = []
            for sol in results:
                if sol is not None and sol.converged and len(sol.branches):
                    load = line_loading(sol, cfg.line_limit)
                    over.extend(int(k) for k in sol.branches[load > 1.0])
            if not over:
                break
            self.branch_on[over] = False
            tripped.extend(sorted(over))

        assessments = assess_islands(partition, net, self.p_set, results, self.gen_on, cfg.rules)
        available = np.array([a.available for a in assessments], dtype=bool)
        dispatch = self.p_set.copy()
        gen_avail = np.zeros(net.n_gen, dtype=bool)
        for k, sol in enumerate(results):
            if sol is not None and sol.converged and sol.slack_gen is not None:
                dispatch[sol.slack_gen] = sol.slack_p
        for gi in range(net.n_gen):
            k = partition.island_of[self._gen_bus[gi]]
            gen_avail[gi] = self.gen_on[gi] and k >= 0 and available[k]
        cost = generation_cost(net, dispatch, gen_avail)
        p_discarded = math.fsum(b.p_load for b, alive in zip(net.buses, self.bus_alive) if not alive)

        self.stage += 1
        if not available.any():
            verdict = Verdict.LOSE
        elif self.stage >= cfg.stage_max:
            verdict = Verdict.WIN
        else:
            verdict = Verdict.ONGOING
        breakdown = compute_reward(assessments, verdict, cfg, cost=cost, p_total=self.p_total, p_discarded=p_discarded)

        self.partition, self.results, self.available = partition, results, available
        obs = self.observe()
        p_available = math.fsum(a.load_total for a in assessments if a.available)
        for k, isl in enumerate(partition.islands):
            if not available[k]:
                self.bus_alive[isl] = False
        self.done = verdict != Verdict.ONGOING
        info = {
            "stage": self.stage,
            "attacked": None if attacked is None else net.branch_label(attacked),
            "tripped": [net.branch_label(k) for k in tripped],
            "islands": len(partition),
            "available_islands": int(available.sum()),
            "p_loss": self.p_total - p_available,
            "p_available": p_available,
            "cost": cost,
            "dispatch": dispatch,
            "assessments": assessments,
        }
        self.history.append(
            {
                "stage": self.stage,
                "attacked": info["attacked"] or "",
                "tripped": " ".join(info["tripped"]),
                "islands": info["islands"],
                "available_islands": info["available_islands"],
                "cost_term": breakdown.cost_term,
                "loss_term": breakdown.loss_term,
                "convergence_term": breakdown.convergence_term,
                "win_term": breakdown.win_term,
                "reward": breakdown.total,
                "verdict": verdict.value,
            }
        )
        if not self.done and not cfg.act_then_attack:
            self._pending_attack = self._attack()
            self.partition, self.results = self.solve_islands(self.p_set)
            self.available = np.array([r is not None and r.converged for r in self.results], dtype=bool)
            obs = self.observe()
        return StepOutcome(obs, breakdown.total, breakdown, self.done, verdict, info)

    def observe(self) -> np.ndarray:
        """Current state vector (zeros for tripped lines and dead islands)."""
        net = self.net
        line_status = np.zeros(net.n_branch)
        block = np.zeros((net.n_bus, 4))
        for k, sol in enumerate(self.results):
            if sol is None or not sol.converged or not self.available[k]:
                continue
            if len(sol.branches):
                line_status[sol.branches] = line_loading(sol, self.cfg.line_limit)
            block[sol.buses] = np.column_stack([sol.p_inj, sol.q_inj, sol.v_mag, sol.v_ang])
        return np.concatenate([line_status, block.reshape(-1)])

    # -- internals ---------------------------------------------------------
    def _attack(self):
        net = self.net
        while self._attack_order:
            k = self._attack_order.pop(0)
            u, v = net.bus_index(net.branches[k].from_bus), net.bus_index(net.branches[k].to_bus)
            if self.branch_on[k] and self.bus_alive[u] and self.bus_alive[v]:
                self.branch_on[k] = False
                return k
        return None

    def _slack_for(self, island) -> int | None:
        net = self.net
        members = set(int(i) for i in island)
        gens = [gi for gi in range(net.n_gen) if self.gen_on[gi] and self._gen_bus[gi] in members]
        if not gens:
            return None
        for gi in gens:
            if self._gen_bus[gi] in self._case_slack_buses:
                return gi
        return min(gens, key=lambda gi: (-net.generators[gi].p_max, net.generators[gi].bus))

    def solve_islands(self, p_set):
        """Partition the live grid and solve every island that has a generator."""
        net = self.net
        partition = detect_islands(net, self.branch_on, self.bus_alive)
        ybus, yf, yt = build_admittance(net, self.branch_on, with_branch_matrices=True)
        results = []
        for isl in partition.islands:
            slack = self._slack_for(isl)
            if slack is None:
                results.append(None)
                continue
            prob = island_problem(net, isl, self.branch_on, p_set, self.gen_on, slack, ybus, yf, yt)
            results.append(solve_island(prob, self.cfg.pf_options))
        return partition, results
