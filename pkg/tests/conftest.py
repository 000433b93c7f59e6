from pathlib import Path

import pytest

from gridcascade.case import builtin_case, parse_case

DATA = Path(__file__).parent / "data"

TWO_BUS = """\
name = two-bus
base_mva = 100

[bus]
# id type pd qd gs bs vm va base_kv
1 3 0 0 0 0 1.0 0 0
2 1 100 0 0 0 1.0 0 0

[gen]
# bus pg qg qmax qmin vg pmax pmin status
1 100 0 999 -999 1.0 300 0 1

[branch]
# from to r x b tap shift status
1 2 0 0.1 0 0 0 1

[gencost]
3 0.01 20 0
"""


@pytest.fixture(scope="session")
def net14():
    return builtin_case("ieee14")


@pytest.fixture(scope="session")
def net118():
    return builtin_case("ieee118")


@pytest.fixture()
def two_bus():
    return parse_case(TWO_BUS)


def graph_network(n_bus, edges):
    """Bare network over buses 1..n_bus with one branch per (u, v) edge."""
    from gridcascade.case import Branch, Bus, BusKind, Generator, Network

    buses = [Bus(i, BusKind.SLACK if i == 1 else BusKind.PQ, 0.0, 0.0) for i in range(1, n_bus + 1)]
    branches = [Branch(u, v, 0.01, 0.1) for u, v in edges]
    return Network(100.0, buses, branches, [Generator(1, 100.0)], name="graph")


def bfs_components(n_bus, edges, mask):
    """Connected components of buses 1..n_bus using only edges with mask set."""
    from collections import deque

    adj = {i: [] for i in range(1, n_bus + 1)}
    for (u, v), on in zip(edges, mask):
        if on:
            adj[u].append(v)
            adj[v].append(u)
    seen, comps = set(), []
    for start in range(1, n_bus + 1):
        if start in seen:
            continue
        comp, queue = {start}, deque([start])
        seen.add(start)
        while queue:
            x = queue.popleft()
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    comp.add(y)
                    queue.append(y)
        comps.append(comp)
    return comps
