"""Island detection and per-island availability."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .case import Network

__all__ = [
    "UnionFind",
    "IslandPartition",
    "detect_islands",
    "Reason",
    "AvailabilityRules",
    "IslandAssessment",
    "assess_islands",
]


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True


@dataclass(frozen=True)
class IslandPartition:
    """``island_of[i]`` is the island index of bus position ``i`` (-1 for
    de-energised buses); ``islands[k]`` lists the bus positions of island
    ``k`` in ascending order.  Islands are ordered by their lowest bus."""

    island_of: np.ndarray
    islands: tuple

    def __len__(self):
        return len(self.islands)

    def bus_ids(self, net: Network) -> list[set[int]]:
        return [{net.buses[i].id for i in isl} for isl in self.islands]


def detect_islands(net: Network, branch_mask=None, bus_mask=None) -> IslandPartition:
    """Group buses joined by in-service branches.

    ``branch_mask`` switches branches off on top of their case status;
    buses outside ``bus_mask`` take no part and any branch touching them is
    ignored.
    """
    n = net.n_bus
    alive = np.ones(n, dtype=bool) if bus_mask is None else np.asarray(bus_mask, dtype=bool)
    closed = np.ones(net.n_branch, dtype=bool) if branch_mask is None else np.asarray(branch_mask, dtype=bool)
    uf = UnionFind(n)
    for k, br in enumerate(net.branches):
        if not (closed[k] and br.in_service):
            continue
        u, v = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        if alive[u] and alive[v]:
            uf.union(u, v)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        if alive[i]:
            groups.setdefault(uf.find(i), []).append(i)
    islands = tuple(sorted((np.array(g, dtype=int) for g in groups.values()), key=lambda a: a[0]))
    island_of = np.full(n, -1, dtype=int)
    for k, isl in enumerate(islands):
        island_of[isl] = k
    return IslandPartition(island_of, islands)


class Reason(str, enum.Enum):
    OK = "Ok"
    NO_GENERATOR = "NoGenerator"
    CAPACITY_SHORTFALL = "CapacityShortfall"
    PF_DIVERGED = "PfDiverged"
    SLACK_INFEASIBLE = "SlackInfeasible"
    DISPATCH_SHORTFALL = "DispatchShortfall"


@dataclass(frozen=True)
class AvailabilityRules:
    """Which checks an island must pass to stay alive.

    ``dispatch_cover`` requires the scheduled output of the island's units
    (their action set-points, slack included) to cover the island load.
    """

    require_generator: bool = True
    capacity: bool = True
    convergence: bool = True
    slack_limits: bool = True
    dispatch_cover: bool = False


@dataclass(frozen=True)
class IslandAssessment:
    island_id: int
    available: bool
    reason: Reason
    max_gen_total: float
    gen_total: float
    load_total: float
    scheduled_total: float = 0.0
    converged: bool = False


def assess_islands(partition, net, dispatch, pf_results, gen_mask=None, rules=None):
    """Decide which islands survive the stage.

    ``dispatch`` is the MW set-point of every generator and ``pf_results``
    holds one :class:`~gridcascade.powerflow.PfSolution` (or ``None`` when
    the island was not solved) per island.  Checks run in the order
    generator, capacity, convergence, slack limits, dispatch cover; an
    unavailable island reports the first one it fails.
    """
    rules = rules or AvailabilityRules()
    dispatch = np.asarray(dispatch, dtype=float)
    gen_on = np.ones(net.n_gen, dtype=bool) if gen_mask is None else np.asarray(gen_mask, dtype=bool)
    gen_island = np.array([partition.island_of[net.bus_index(g.bus)] for g in net.generators], dtype=int)
    out = []
    for k, isl in enumerate(partition.islands):
        gens = [gi for gi in range(net.n_gen) if gen_on[gi] and gen_island[gi] == k]
        load = math.fsum(net.buses[i].p_load for i in isl)
        cap = math.fsum(net.generators[gi].p_max for gi in gens)
        scheduled = math.fsum(dispatch[gi] for gi in gens)
        sol = pf_results[k]
        converged = sol is not None and sol.converged
        if converged:
            gen_total = math.fsum(sol.slack_p if gi == sol.slack_gen else dispatch[gi] for gi in gens)
        else:
            gen_total = scheduled

        reason = Reason.OK
        if rules.require_generator and not gens:
            reason = Reason.NO_GENERATOR
        elif rules.capacity and cap < load:
            reason = Reason.CAPACITY_SHORTFALL
        elif rules.convergence and not converged:
            reason = Reason.PF_DIVERGED
        elif rules.slack_limits and converged and sol.slack_gen is not None and not (
            0.0 <= sol.slack_p <= net.generators[sol.slack_gen].p_max
        ):
            reason = Reason.SLACK_INFEASIBLE
        elif rules.dispatch_cover and scheduled < load:
            reason = Reason.DISPATCH_SHORTFALL
        out.append(
            IslandAssessment(k, reason is Reason.OK, reason, cap, gen_total, load, scheduled, converged)
        )
    return out
