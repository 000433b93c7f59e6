import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridcascade.case import Branch, Bus, BusKind, Generator, Network, parse_case
from gridcascade.powerflow import (
    PfOptions,
    PfSolution,
    _jacobian,
    build_admittance,
    generation_cost,
    island_problem,
    line_loading,
    power_mismatch,
    solve_base_case,
    solve_island,
)

from conftest import DATA


def read_reference(name):
    with open(DATA / f"{name}_reference.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    vm = np.array([float(r["vm_pu"]) for r in rows])
    va = np.array([float(r["va_deg"]) for r in rows])
    slack_p = float((DATA / f"{name}_slack_p.txt").read_text())
    return vm, va, slack_p


def dense_ybus(net, mask=None):
    """Textbook element-by-element construction, kept deliberately naive."""
    n = net.n_bus
    y = [[0j] * n for _ in range(n)]
    for i, b in enumerate(net.buses):
        y[i][i] += complex(b.g_shunt, b.b_shunt) / net.base_mva
    for k, br in enumerate(net.branches):
        if not br.in_service or (mask is not None and not mask[k]):
            continue
        f, t = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        ys = 1 / complex(br.r, br.x)
        a = br.tap_ratio * complex(math.cos(math.radians(br.phase_shift)), math.sin(math.radians(br.phase_shift)))
        half_b = complex(0, br.b_charging / 2)
        y[f][f] += (ys + half_b) / (abs(a) ** 2)
        y[t][t] += ys + half_b
        y[f][t] += -ys / a.conjugate()
        y[t][f] += -ys / a
    return np.array(y)


def random_network(seed, n_bus):
    """Connected random grid: spanning tree plus a few extra lines."""
    rng = np.random.default_rng(seed)
    buses = [Bus(1, BusKind.SLACK, 0.0, 0.0)]
    for i in range(2, n_bus + 1):
        kind = BusKind.PV if rng.random() < 0.3 else BusKind.PQ
        buses.append(Bus(i, kind, float(rng.uniform(0, 40)), float(rng.uniform(-5, 15)), b_shunt=float(rng.uniform(0, 5))))
    edges = {(int(rng.integers(1, i)), i) for i in range(2, n_bus + 1)}
    for _ in range(n_bus // 2):
        u, v = sorted(rng.choice(np.arange(1, n_bus + 1), size=2, replace=False))
        edges.add((int(u), int(v)))
    branches = []
    for u, v in sorted(edges):
        tap = float(rng.choice([1.0, rng.uniform(0.95, 1.05)]))
        shift = float(rng.choice([0.0, rng.uniform(-5, 5)]))
        branches.append(Branch(u, v, float(rng.uniform(0.005, 0.05)), float(rng.uniform(0.05, 0.3)),
                               float(rng.uniform(0, 0.05)), tap, shift))
    gens = [Generator(1, 500.0, v_set=1.02)]
    for b in buses[1:]:
        if b.kind == BusKind.PV:
            gens.append(Generator(b.id, 100.0, p_gen=float(rng.uniform(0, 30)), v_set=float(rng.uniform(0.98, 1.04))))
    return Network(100.0, buses, branches, gens, name=f"random-{seed}")


def base_problem(net):
    p_set = np.array([g.p_gen for g in net.generators])
    return island_problem(net, range(net.n_bus), np.ones(net.n_branch, bool), p_set,
                          np.ones(net.n_gen, bool), 0)


# -- admittance ----------------------------------------------------------------

def test_two_bus_ybus(two_bus):
    y = build_admittance(two_bus).toarray()
    np.testing.assert_allclose(y, [[-10j, 10j], [10j, -10j]], atol=1e-12)
    assert abs(y[0, 1]) == pytest.approx(10.0)
    assert np.angle(-y[0, 1], deg=True) == pytest.approx(-90.0)


def test_all_branches_out_leaves_shunts(net14):
    y = build_admittance(net14, np.zeros(net14.n_branch, bool)).toarray()
    expected = np.diag([complex(b.g_shunt, b.b_shunt) / net14.base_mva for b in net14.buses])
    np.testing.assert_array_equal(y, expected)
    assert y[8, 8] == pytest.approx(0.19j)


@pytest.mark.parametrize("name", ["net14", "net118"])
def test_ybus_matches_dense_oracle(name, request):
    net = request.getfixturevalue(name)
    y = build_admittance(net).toarray()
    oracle = dense_ybus(net)
    np.testing.assert_allclose(y.sum(axis=1), oracle.sum(axis=1), rtol=0, atol=1e-12)
    np.testing.assert_allclose(y, oracle, rtol=0, atol=1e-12)


def test_ybus_masked_matches_dense_oracle(net14):
    mask = np.ones(net14.n_branch, bool)
    mask[[1, 6, 13]] = False
    np.testing.assert_allclose(build_admittance(net14, mask).toarray(), dense_ybus(net14, mask), atol=1e-12)


def test_ybus_pattern_symmetric(net118):
    y = build_admittance(net118).toarray()
    assert np.array_equal(y != 0, (y != 0).T)


def test_zero_impedance_rejected(two_bus):
    import dataclasses

    br = dataclasses.replace(two_bus.branches[0], x=0.0)
    bad = dataclasses.replace(two_bus, branches=(br,))
    with pytest.raises(ValueError, match="zero impedance"):
        build_admittance(bad)


# -- Newton-Raphson --------------------------------------------------------------

def test_two_bus_closed_form(two_bus):
    sol = solve_island(base_problem(two_bus))
    assert sol.converged
    # lossless line, P = V1 V2 sin(d)/x = 1, Q = 0  =>  V2 = cos d, sin 2d = 2 x P
    delta = 0.5 * math.asin(2 * 0.1 * 1.0)
    assert sol.v_mag[1] == pytest.approx(math.cos(delta), abs=1e-9)
    assert sol.v_ang[1] == pytest.approx(-delta, abs=1e-9)
    assert sol.slack_p == pytest.approx(100.0, abs=1e-6)


def test_ieee14_matches_reference(net14):
    sol = solve_base_case(net14)
    vm, va, slack_p = read_reference("ieee14")
    assert sol.converged and sol.iterations <= 10
    assert np.max(np.abs(sol.v_mag - vm)) < 1e-4
    assert np.max(np.abs(np.degrees(sol.v_ang) - va)) < 1e-3
    assert 230.0 <= sol.slack_p <= 235.0
    assert sol.slack_p == pytest.approx(slack_p, abs=1e-4)


def test_ieee118_matches_reference(net118):
    sol = solve_base_case(net118)
    vm, _, slack_p = read_reference("ieee118")
    assert sol.converged
    assert np.max(np.abs(sol.v_mag - vm)) < 1e-3
    assert sol.slack_p == pytest.approx(slack_p, abs=0.1)


def test_mismatch_invariant(net14):
    opts = PfOptions()
    prob = base_problem(net14)
    sol = solve_island(prob, opts)
    v = sol.v_mag * np.exp(1j * sol.v_ang)
    s_calc = v * np.conj(prob.ybus @ v) * prob.base_mva
    p_err = s_calc.real - (prob.p_gen - prob.p_load)
    non_slack = np.arange(prob.n) != prob.slack
    assert np.max(np.abs(p_err[non_slack])) <= opts.tol_mismatch * prob.base_mva
    pq = np.setdiff1d(np.arange(prob.n), np.concatenate([prob.pv, [prob.slack]]))
    q_err = s_calc.imag[pq] - (prob.q_gen[pq] - prob.q_load[pq])
    assert np.max(np.abs(q_err)) <= opts.tol_mismatch * prob.base_mva
    for i in sol.q_limited:
        q = s_calc.imag[i] + prob.q_load[i]
        assert min(abs(q - prob.q_min[i]), abs(q - prob.q_max[i])) <= opts.tol_mismatch * prob.base_mva


@pytest.mark.parametrize("name", ["net14", "net118"])
def test_power_balance(name, request):
    net = request.getfixturevalue(name)
    opts = PfOptions()
    sol = solve_base_case(net, opts)
    losses = np.sum((sol.s_from + sol.s_to).real)
    shunt = sum(net.buses[b].g_shunt * vm**2 for b, vm in zip(sol.buses, sol.v_mag))
    # the slack closes the balance, so injections sum to series losses + shunt draw
    gap = np.sum(sol.p_inj) - losses - shunt
    assert abs(gap) <= 10 * opts.tol_mismatch * net.base_mva * net.n_bus


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n_bus=st.integers(2, 9))
def test_jacobian_matches_finite_differences(seed, n_bus):
    net = random_network(seed, n_bus)
    prob = base_problem(net)
    rng = np.random.default_rng(seed)
    v = rng.uniform(0.9, 1.1, prob.n) * np.exp(1j * rng.uniform(-0.3, 0.3, prob.n))
    s_spec = ((prob.p_gen - prob.p_load) - 1j * prob.q_load) / prob.base_mva
    pv = np.asarray(prob.pv, dtype=int)
    pq = np.setdiff1d(np.arange(prob.n), np.concatenate([pv, [prob.slack]]))
    pvpq = np.concatenate([pv, pq])
    jac = _jacobian(prob.ybus, v, pvpq, pq)

    def residual(x):
        va, vm = np.angle(v).copy(), np.abs(v).copy()
        va[pvpq] = x[: len(pvpq)]
        vm[pq] = x[len(pvpq):]
        mis = power_mismatch(prob.ybus, vm * np.exp(1j * va), s_spec)
        return np.concatenate([mis[pvpq].real, mis[pq].imag])

    x0 = np.concatenate([np.angle(v)[pvpq], np.abs(v)[pq]])
    h = 1e-6
    fd = np.empty_like(jac)
    for j in range(len(x0)):
        e = np.zeros_like(x0)
        e[j] = h
        fd[:, j] = (residual(x0 + e) - residual(x0 - e)) / (2 * h)
    scale = max(np.max(np.abs(fd)), 1.0)
    assert np.max(np.abs(jac - fd)) / scale < 1e-5


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n_bus=st.integers(2, 9))
def test_random_islands_converge_consistently(seed, n_bus):
    net = random_network(seed, n_bus)
    sol = solve_island(base_problem(net))
    assert sol.converged
    # branch flows and bus injections come from the same voltages
    inj = np.zeros(net.n_bus, complex)
    np.add.at(inj, [net.bus_index(net.branches[k].from_bus) for k in sol.branches], sol.s_from)
    np.add.at(inj, [net.bus_index(net.branches[k].to_bus) for k in sol.branches], sol.s_to)
    shunt = np.array([complex(b.g_shunt, -b.b_shunt) for b in net.buses]) * sol.v_mag**2
    np.testing.assert_allclose(inj + shunt, sol.p_inj + 1j * sol.q_inj, atol=1e-8)


def test_solve_is_deterministic(net118):
    a = solve_base_case(net118)
    b = solve_base_case(net118)
    assert a.iterations == b.iterations
    assert np.array_equal(a.v_mag, b.v_mag) and np.array_equal(a.v_ang, b.v_ang)
    assert np.array_equal(a.s_from, b.s_from) and a.slack_p == b.slack_p


def test_zero_load_island():
    net = parse_case(
        "base_mva = 100\n[bus]\n1 3 0 0 0 0 1 0 0\n2 1 0 0 0 0 1 0 0\n"
        "[gen]\n1 0 0 50 -50 1.0 100 0 1\n[branch]\n1 2 0.01 0.1 0 0 0 1\n"
    )
    sol = solve_base_case(net)
    assert sol.converged and sol.iterations <= 2
    assert np.max(np.abs(sol.s_from)) < 1e-9 and np.max(np.abs(sol.s_to)) < 1e-9
    assert abs(sol.slack_p) < 1e-9


def test_divergence_reported_not_raised(two_bus):
    prob = base_problem(two_bus)
    prob.p_load = prob.p_load * 20  # far beyond the line's transfer limit
    sol = solve_island(prob)
    assert not sol.converged
    assert sol.reason


# -- line loading and cost -------------------------------------------------------

def _fake_solution(s_from, s_to, branches):
    z = np.zeros(0)
    return PfSolution(True, 1, z, z, z, z, z, np.asarray(branches), np.asarray(s_from, complex),
                      np.asarray(s_to, complex), 0.0, None, np.zeros(0, int), "")


def test_line_loading_example():
    sol = _fake_solution([60 + 80j], [-98.0], [0])
    assert line_loading(sol, 200.0)[0] == pytest.approx(0.5)


def test_line_loading_tripped_is_zero():
    sol = _fake_solution([100.0], [-98.0], [2])
    full = line_loading(sol, 200.0, n_branch=4)
    np.testing.assert_array_equal(full, [0, 0, 0.5, 0])


def test_line_loading_rejects_bad_limit():
    with pytest.raises(ValueError):
        line_loading(_fake_solution([1.0], [1.0], [0]), 0.0)


def test_line_loading_matches_direct_recomputation(net14):
    sol = solve_base_case(net14)
    load = line_loading(sol, 200.0, n_branch=net14.n_branch)
    v = {net14.buses[b].id: vm * np.exp(1j * va) for b, vm, va in zip(sol.buses, sol.v_mag, sol.v_ang)}
    for k, br in enumerate(net14.branches):
        ys = 1 / complex(br.r, br.x)
        a = br.tap_ratio * np.exp(1j * math.radians(br.phase_shift))
        vf, vt = v[br.from_bus], v[br.to_bus]
        i_f = (vf / a - vt) * ys / np.conj(a) + vf / abs(a) ** 2 * 0.5j * br.b_charging
        i_t = (vt - vf / a) * ys + vt * 0.5j * br.b_charging
        s_f = vf * np.conj(i_f) * 100
        s_t = vt * np.conj(i_t) * 100
        assert load[k] == pytest.approx(max(abs(s_f), abs(s_t)) / 200.0, abs=1e-10)
    assert np.all((load > 0) & (load < 1))


def test_generation_cost_polynomial(two_bus):
    assert generation_cost(two_bus, [100.0]) == pytest.approx(2100.0)
    assert generation_cost(two_bus, [100.0], [False]) == 0.0


def _gencost_rows(path):
    rows, on = [], False
    for line in path.read_text().splitlines():
        line = line.split("#")[0].strip()
        if line.startswith("["):
            on = line == "[gencost]"
            continue
        if on and line:
            nums = [float(x) for x in line.split()]
            rows.append(nums[1:])  # highest power first
    return rows


def test_generation_cost_matches_scalar_oracle(net14):
    from importlib import resources

    path = resources.files("gridcascade.data").joinpath("ieee14.case")
    sol = solve_base_case(net14)
    dispatch = np.array([g.p_gen for g in net14.generators])
    dispatch[0] = sol.slack_p
    expected = 0.0
    for coeffs, p in zip(_gencost_rows(path), dispatch):
        one = 0.0
        for c in coeffs:
            one = one * p + c
        expected += one
    got = generation_cost(net14, dispatch)
    assert got == pytest.approx(expected, abs=1e-9)
