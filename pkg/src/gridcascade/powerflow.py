"""Newton-Raphson AC power flow on one island at a time.

Quantities inside the solver are per-unit on the network's MVA base; the
problem and solution records carry MW / MVAr / MVA so callers never have
to convert.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .case import BusKind, Network

__all__ = [
    "PfOptions",
    "PfProblem",
    "PfSolution",
    "build_admittance",
    "branch_admittances",
    "island_problem",
    "solve_island",
    "solve_base_case",
    "power_mismatch",
    "line_loading",
    "generation_cost",
]


@dataclass(frozen=True)
class PfOptions:
    tol_mismatch: float = 1e-8
    max_iter: int = 20
    enforce_q_limits: bool = True


@dataclass
class PfProblem:
    """One island, ready for :func:`solve_island`.

    Bus-indexed arrays are local to the island (position ``i`` refers to
    network bus ``buses[i]``).  ``slack`` is a local index.  ``pv`` marks
    voltage-controlled buses; every other non-slack bus is PQ.
    """

    buses: np.ndarray
    slack: int
    pv: np.ndarray
    ybus: np.ndarray
    p_gen: np.ndarray
    q_gen: np.ndarray
    p_load: np.ndarray
    q_load: np.ndarray
    v_set: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    base_mva: float = 100.0
    branches: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    yf: np.ndarray | None = None
    yt: np.ndarray | None = None
    f: np.ndarray | None = None
    t: np.ndarray | None = None
    slack_gen: int | None = None
    slack_angle: float = 0.0
    v0: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.buses)


@dataclass
class PfSolution:
    converged: bool
    iterations: int
    buses: np.ndarray
    v_mag: np.ndarray
    v_ang: np.ndarray
    p_inj: np.ndarray
    q_inj: np.ndarray
    branches: np.ndarray
    s_from: np.ndarray
    s_to: np.ndarray
    slack_p: float
    slack_gen: int | None = None
    q_limited: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    reason: str = ""

    @property
    def branch_flow_from(self) -> np.ndarray:
        return np.abs(self.s_from)

    @property
    def branch_flow_to(self) -> np.ndarray:
        return np.abs(self.s_to)

    @property
    def voltage(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)


def branch_admittances(net: Network, branch_mask=None):
    """Per-branch pi-model entries ``(yff, yft, ytf, ytt)`` in p.u.

    Masked-out branches get zeros.  Raises ``ValueError`` for an in-service
    branch with zero impedance.
    """
    nl = net.n_branch
    mask = np.ones(nl, dtype=bool) if branch_mask is None else np.asarray(branch_mask, dtype=bool)
    if mask.shape != (nl,):
        raise ValueError(f"branch mask has shape {mask.shape}, expected ({nl},)")
    r = np.array([br.r for br in net.branches])
    x = np.array([br.x for br in net.branches])
    bad = mask & (r == 0) & (x == 0)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise ValueError(f"branch {k} ({net.branch_label(k)}) has zero impedance")
    mask = mask & np.array([br.in_service for br in net.branches], dtype=bool)
    z = np.where(mask, r + 1j * x, 1.0)
    ys = np.where(mask, 1.0 / z, 0.0)
    bc = np.where(mask, [br.b_charging for br in net.branches], 0.0)
    tap = np.array([br.tap_ratio for br in net.branches]) * np.exp(
        1j * np.deg2rad([br.phase_shift for br in net.branches])
    )
    ytt = ys + 0.5j * bc
    yff = ytt / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap
    return yff, yft, ytf, ytt


def build_admittance(net: Network, branch_mask=None, *, with_branch_matrices=False):
    """Bus admittance matrix (sparse CSR, p.u.) over all network buses.

    With ``with_branch_matrices`` also returns the from/to branch matrices
    ``Yf`` and ``Yt`` so that ``Yf @ V`` is the current injected at each
    branch's from end.
    """
    nb, nl = net.n_bus, net.n_branch
    yff, yft, ytf, ytt = branch_admittances(net, branch_mask)
    f = np.array([net.bus_index(br.from_bus) for br in net.branches], dtype=int)
    t = np.array([net.bus_index(br.to_bus) for br in net.branches], dtype=int)
    ysh = np.array([b.g_shunt + 1j * b.b_shunt for b in net.buses]) / net.base_mva
    rows = np.arange(nl)
    cf = sp.csr_matrix((np.ones(nl), (rows, f)), shape=(nl, nb))
    ct = sp.csr_matrix((np.ones(nl), (rows, t)), shape=(nl, nb))
    yf = sp.diags(yff) @ cf + sp.diags(yft) @ ct
    yt = sp.diags(ytf) @ cf + sp.diags(ytt) @ ct
    ybus = (cf.T @ yf + ct.T @ yt + sp.diags(ysh)).tocsr()
    if with_branch_matrices:
        return ybus, yf.tocsr(), yt.tocsr()
    return ybus


def island_problem(net, buses, branch_mask, p_set, gen_mask, slack_gen, ybus=None, yf=None, yt=None):
    """Assemble the :class:`PfProblem` for the buses in ``buses``.

    ``p_set`` holds the MW set-point of every generator (the slack
    generator's entry is ignored); ``gen_mask`` marks generators that are
    in service.  ``slack_gen`` is the generator index that absorbs the
    island's mismatch and must sit on one of ``buses``.
    """
    buses = np.asarray(sorted(buses), dtype=int)
    local = {int(b): i for i, b in enumerate(buses)}
    n = len(buses)
    if ybus is None:
        ybus, yf, yt = build_admittance(net, branch_mask, with_branch_matrices=True)
    ybus_loc = ybus[buses][:, buses].toarray()

    p_gen = np.zeros(n)
    q_gen = np.zeros(n)
    q_min = np.zeros(n)
    q_max = np.zeros(n)
    v_set = np.array([net.buses[b].v_mag_init for b in buses], dtype=float)
    pv = np.zeros(n, dtype=bool)
    slack_bus = local[net.bus_index(net.generators[slack_gen].bus)]
    for gi, g in enumerate(net.generators):
        bi = net.bus_index(g.bus)
        if not gen_mask[gi] or bi not in local:
            continue
        li = local[bi]
        v_set[li] = g.v_set
        if gi != slack_gen:
            p_gen[li] += p_set[gi]
        q_min[li] += g.q_min
        q_max[li] += g.q_max
        if li != slack_bus:
            pv[li] = True
    p_load = np.array([net.buses[b].p_load for b in buses])
    q_load = np.array([net.buses[b].q_load for b in buses])

    mask = np.asarray(branch_mask, dtype=bool) & np.array([br.in_service for br in net.branches])
    fidx = np.array([net.bus_index(br.from_bus) for br in net.branches])
    tidx = np.array([net.bus_index(br.to_bus) for br in net.branches])
    inside = np.isin(fidx, buses) & np.isin(tidx, buses) & mask
    brs = np.flatnonzero(inside)
    return PfProblem(
        buses=buses,
        slack=slack_bus,
        pv=np.flatnonzero(pv),
        ybus=ybus_loc,
        p_gen=p_gen,
        q_gen=q_gen,
        p_load=p_load,
        q_load=q_load,
        v_set=v_set,
        q_min=q_min,
        q_max=q_max,
        base_mva=net.base_mva,
        branches=brs,
        yf=yf[brs][:, buses].toarray(),
        yt=yt[brs][:, buses].toarray(),
        f=np.array([local[i] for i in fidx[brs]], dtype=int),
        t=np.array([local[i] for i in tidx[brs]], dtype=int),
        slack_gen=slack_gen,
        slack_angle=math.radians(net.buses[buses[slack_bus]].v_ang_init),
    )


def power_mismatch(ybus, v, s_spec):
    """Complex injection mismatch ``V conj(Y V) - S_spec`` in p.u."""
    return v * np.conj(ybus @ v) - s_spec


def _jacobian(ybus, v, pvpq, pq):
    ibus = ybus @ v
    vnorm = v / np.abs(v)
    ds_dvm = v[:, None] * np.conj(ybus * vnorm[None, :]) + np.diag(np.conj(ibus) * vnorm)
    ds_dva = 1j * v[:, None] * np.conj(np.diag(ibus) - ybus * v[None, :])
    j11 = ds_dva[np.ix_(pvpq, pvpq)].real
    j12 = ds_dvm[np.ix_(pvpq, pq)].real
    j21 = ds_dva[np.ix_(pq, pvpq)].imag
    j22 = ds_dvm[np.ix_(pq, pq)].imag
    return np.block([[j11, j12], [j21, j22]])


def _newton(ybus, v, s_spec, slack, pv, pq, tol, max_iter):
    pvpq = np.concatenate([pv, pq]).astype(int)
    npvpq = len(pvpq)

    def residual(v):
        mis = power_mismatch(ybus, v, s_spec)
        return np.concatenate([mis[pvpq].real, mis[pq].imag])

    va = np.angle(v)
    vm = np.abs(v)
    f = residual(v)
    it = 0
    if not np.all(np.isfinite(f)):
        return v, False, it, "non-finite mismatch"
    if f.size == 0 or np.max(np.abs(f)) <= tol:
        return v, True, it, ""
    while it < max_iter:
        it += 1
        jac = _jacobian(ybus, v, pvpq, pq)
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            return v, False, it, "singular Jacobian"
        if not np.all(np.isfinite(dx)):
            return v, False, it, "singular Jacobian"
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)
        f = residual(v)
        if not np.all(np.isfinite(f)):
            return v, False, it, "non-finite mismatch"
        if np.max(np.abs(f)) <= tol:
            return v, True, it, ""
    return v, False, it, f"no convergence in {max_iter} iterations"


def solve_island(prob: PfProblem, opts: PfOptions | None = None) -> PfSolution:
    """Solve one island by Newton-Raphson in polar coordinates.

    Starts flat (angles 0 except the slack's reference angle, magnitudes at
    set-points) unless ``prob.v0`` is
    given.  With Q-limit enforcement every PV bus whose reactive output
    leaves its limits after a converged solve is fixed at the violated
    limit and turned into a PQ bus, and the solve repeats from the current
    voltages.  Non-convergence is reported, never raised.
    """
    opts = opts or PfOptions()
    n = prob.n
    base = prob.base_mva
    pv = np.asarray(prob.pv, dtype=int)
    is_pq = np.ones(n, dtype=bool)
    is_pq[pv] = False
    is_pq[prob.slack] = False
    q_fixed = np.array(prob.q_gen, dtype=float)
    limited = []

    if prob.v0 is not None:
        v = np.array(prob.v0, dtype=complex)
    else:
        vm = np.ones(n)
        vm[pv] = prob.v_set[pv]
        vm[prob.slack] = prob.v_set[prob.slack]
        va = np.zeros(n)
        va[prob.slack] = prob.slack_angle
        v = vm * np.exp(1j * va)

    total_it = 0
    while True:
        pv_now = np.flatnonzero(~is_pq)
        pv_now = pv_now[pv_now != prob.slack]
        pq_now = np.flatnonzero(is_pq)
        s_spec = ((prob.p_gen - prob.p_load) + 1j * (np.where(is_pq, q_fixed, 0.0) - prob.q_load)) / base
        v, ok, it, reason = _newton(prob.ybus, v, s_spec, prob.slack, pv_now, pq_now,
                                    opts.tol_mismatch, opts.max_iter)
        total_it += it
        if not ok or not opts.enforce_q_limits or len(pv_now) == 0:
            break
        s = v * np.conj(prob.ybus @ v) * base
        q_gen = s.imag[pv_now] + prob.q_load[pv_now]
        over = q_gen > prob.q_max[pv_now] + opts.tol_mismatch * base
        under = q_gen < prob.q_min[pv_now] - opts.tol_mismatch * base
        if not (over.any() or under.any()):
            break
        hit_max = pv_now[over]
        hit_min = pv_now[under]
        q_fixed[hit_max] = prob.q_max[hit_max]
        q_fixed[hit_min] = prob.q_min[hit_min]
        is_pq[hit_max] = True
        is_pq[hit_min] = True
        limited.extend(int(i) for i in np.concatenate([hit_max, hit_min]))

    s = v * np.conj(prob.ybus @ v) * base
    if prob.yf is not None and len(prob.branches):
        s_from = v[prob.f] * np.conj(prob.yf @ v) * base
        s_to = v[prob.t] * np.conj(prob.yt @ v) * base
    else:
        s_from = np.zeros(len(prob.branches), dtype=complex)
        s_to = np.zeros(len(prob.branches), dtype=complex)
    slack_p = float(s.real[prob.slack] + prob.p_load[prob.slack] - prob.p_gen[prob.slack])
    return PfSolution(
        converged=bool(ok),
        iterations=total_it,
        buses=prob.buses,
        v_mag=np.abs(v),
        v_ang=np.angle(v),
        p_inj=s.real,
        q_inj=s.imag,
        branches=prob.branches,
        s_from=s_from,
        s_to=s_to,
        slack_p=slack_p,
        slack_gen=prob.slack_gen,
        q_limited=np.array(sorted(limited), dtype=int),
        reason=reason,
    )


def solve_base_case(net: Network, opts: PfOptions | None = None, flat_start: bool = True) -> PfSolution:
    """Solve the whole network with its case dispatch and case slack bus.

    ``flat_start=False`` starts from the voltages stored in the case.
    """
    slack = next(
        (gi for gi, g in enumerate(net.generators)
         if g.in_service and net.buses[net.bus_index(g.bus)].kind == BusKind.SLACK),
        None,
    )
    if slack is None:
        raise ValueError("case has no in-service generator on a slack bus")
    mask = np.ones(net.n_branch, dtype=bool)
    p_set = np.array([g.p_gen for g in net.generators])
    gen_on = np.array([g.in_service for g in net.generators])
    prob = island_problem(net, range(net.n_bus), mask, p_set, gen_on, slack)
    if not flat_start:
        prob.v0 = np.array([net.buses[i].v_mag_init * np.exp(1j * math.radians(net.buses[i].v_ang_init))
                            for i in prob.buses])
    return solve_island(prob, opts)


def line_loading(sol: PfSolution, line_limit: float, n_branch: int | None = None) -> np.ndarray:
    """Loading fraction ``max(|S_from|, |S_to|) / line_limit`` per branch.

    With ``n_branch`` the result covers the whole network, zero for every
    branch not in ``sol``; otherwise it is aligned with ``sol.branches``.
    """
    if line_limit <= 0:
        raise ValueError(f"line_limit must be positive, got {line_limit}")
    if not sol.converged:
        raise ValueError("line loading needs a converged solution")
    load = np.maximum(np.abs(sol.s_from), np.abs(sol.s_to)) / line_limit
    if n_branch is None:
        return load
    out = np.zeros(n_branch)
    out[sol.branches] = load
    return out


def generation_cost(net: Network, dispatch, availability=None) -> float:
    """Total hourly cost ($) of generators marked available.

    ``dispatch`` is MW per generator; pass the solved output for slack
    units.  ``availability`` is a boolean per generator (all when omitted).
    """
    dispatch = np.asarray(dispatch, dtype=float)
    if dispatch.shape != (net.n_gen,):
        raise ValueError(f"dispatch has shape {dispatch.shape}, expected ({net.n_gen},)")
    avail = np.ones(net.n_gen, dtype=bool) if availability is None else np.asarray(availability, dtype=bool)
    return math.fsum(g.cost(p) for g, p, a in zip(net.generators, dispatch, avail) if a)
