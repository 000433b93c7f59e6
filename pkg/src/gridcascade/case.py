"""Grid data model and the plain-text case format.

A case file is UTF-8 text made of ``key = value`` header lines followed by
named tables.  Each table starts with a ``[name]`` line; every following
non-blank, non-comment line is one row, with columns separated by
whitespace or commas.  ``#`` starts a comment anywhere on a line.

Tables and column order (units as in the standard MATPOWER case tables)::

    [bus]      id type pd qd gs bs vm va base_kv
    [gen]      bus pg qg qmax qmin vg pmax pmin status
    [branch]   from to r x b tap shift status
    [gencost]  ncost c(ncost-1) ... c1 c0          (one row per gen, in order)

``type`` is 1 (PQ), 2 (PV) or 3 (slack).  A ``tap`` of 0 means no
transformer (ratio 1.0).  ``[gencost]`` is optional; generators without a
cost row are priced at a flat 20 $/MWh.  ``base_mva`` is the only required
header key.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

__all__ = [
    "BusKind",
    "Bus",
    "Branch",
    "Generator",
    "Network",
    "CaseFormatError",
    "parse_case",
    "serialize_case",
    "load_case",
    "builtin_case",
    "validate",
    "DEFAULT_COST",
]

#: Cost polynomial (ascending powers) used when a case has no gencost row.
DEFAULT_COST = (0.0, 20.0)

_TABLE_COLUMNS = {
    "bus": ("id", "type", "pd", "qd", "gs", "bs", "vm", "va", "base_kv"),
    "gen": ("bus", "pg", "qg", "qmax", "qmin", "vg", "pmax", "pmin", "status"),
    "branch": ("from", "to", "r", "x", "b", "tap", "shift", "status"),
}
_REQUIRED_TABLES = ("bus", "gen", "branch")
_HEADER_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.+)$")
_TABLE_RE = re.compile(r"^\[([A-Za-z_]+)\]$")


class BusKind(enum.IntEnum):
    PQ = 1
    PV = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    p_load: float
    q_load: float
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    v_mag_init: float = 1.0
    v_ang_init: float = 0.0
    base_kv: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap_ratio: float = 1.0
    phase_shift: float = 0.0
    in_service: bool = True


@dataclass(frozen=True)
class Generator:
    bus: int
    p_max: float
    p_min: float = 0.0
    q_max: float = 9999.0
    q_min: float = -9999.0
    in_service: bool = True
    cost_coeffs: tuple[float, ...] = DEFAULT_COST
    p_gen: float = 0.0
    q_gen: float = 0.0
    v_set: float = 1.0

    def cost(self, p: float) -> float:
        """Hourly cost in $ at output ``p`` MW."""
        return math.fsum(c * p**k for k, c in enumerate(self.cost_coeffs))


@dataclass(frozen=True)
class Network:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    name: str = ""
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "_index", {b.id: i for i, b in enumerate(self.buses)})

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    def bus_index(self, bus_id: int) -> int:
        """Position of bus ``bus_id`` in :attr:`buses`."""
        return self._index[bus_id]

    @property
    def total_load(self) -> float:
        return math.fsum(b.p_load for b in self.buses)

    def branch_label(self, k: int) -> str:
        br = self.branches[k]
        return f"{br.from_bus}-{br.to_bus}"

    def find_branch(self, label: str) -> int:
        """Index of the first branch matching ``"u-v"`` (either direction)."""
        u, v = (int(s) for s in label.split("-"))
        for k, br in enumerate(self.branches):
            if {br.from_bus, br.to_bus} == {u, v}:
                return k
        raise KeyError(f"no branch {label}")


class CaseFormatError(ValueError):
    """Raised for unparsable or semantically invalid case text."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _numbers(tokens, lineno, table):
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise CaseFormatError(f"non-numeric value in [{table}] row: {exc}", lineno) from None


def _as_int(value, lineno, what):
    if value != int(value):
        raise CaseFormatError(f"{what} must be an integer, got {value}", lineno)
    return int(value)


def parse_case(text: str) -> Network:
    """Parse case-file text into a :class:`Network`.

    Raises :class:`CaseFormatError` on syntax errors (with the offending
    line number), unknown or missing tables, dangling bus references and
    duplicate bus ids.
    """
    headers: dict[str, str] = {}
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _TABLE_RE.match(line)
        if m:
            current = m.group(1).lower()
            if current not in _TABLE_COLUMNS and current != "gencost":
                raise CaseFormatError(f"unknown table [{current}]", lineno)
            if current in tables:
                raise CaseFormatError(f"table [{current}] given twice", lineno)
            tables[current] = []
            continue
        if current is None:
            m = _HEADER_RE.match(line)
            if not m:
                raise CaseFormatError(f"expected 'key = value' or a [table] line, got {line!r}", lineno)
            headers[m.group(1).lower()] = m.group(2).strip()
            continue
        row = _numbers(line.replace(",", " ").split(), lineno, current)
        ncol = len(_TABLE_COLUMNS.get(current, ()))
        if current != "gencost" and len(row) != ncol:
            raise CaseFormatError(f"[{current}] rows need {ncol} columns, got {len(row)}", lineno)
        tables[current].append((lineno, row))

    for name in _REQUIRED_TABLES:
        if name not in tables:
            raise CaseFormatError(f"missing required table [{name}]")
    if "base_mva" not in headers:
        raise CaseFormatError("missing header 'base_mva'")
    try:
        base_mva = float(headers["base_mva"])
    except ValueError:
        raise CaseFormatError(f"base_mva is not a number: {headers['base_mva']!r}") from None

    buses = []
    seen = set()
    for lineno, (bid, btype, pd, qd, gs, bs, vm, va, kv) in tables["bus"]:
        bid = _as_int(bid, lineno, "bus id")
        if bid in seen:
            raise CaseFormatError(f"duplicate bus id {bid}", lineno)
        seen.add(bid)
        try:
            kind = BusKind(_as_int(btype, lineno, "bus type"))
        except ValueError:
            raise CaseFormatError(f"unsupported bus type {btype:g}", lineno) from None
        buses.append(Bus(bid, kind, pd, qd, gs, bs, vm, va, kv))

    costs = tables.get("gencost", [])
    if len(costs) > len(tables["gen"]):
        raise CaseFormatError("more [gencost] rows than generators", costs[len(tables["gen"])][0])
    generators = []
    for i, (lineno, (gbus, pg, qg, qmax, qmin, vg, pmax, pmin, status)) in enumerate(tables["gen"]):
        gbus = _as_int(gbus, lineno, "generator bus")
        if gbus not in seen:
            raise CaseFormatError(f"generator {i} references unknown bus {gbus}", lineno)
        coeffs = DEFAULT_COST
        if i < len(costs):
            clineno, crow = costs[i]
            n = _as_int(crow[0], clineno, "ncost")
            if n < 1 or len(crow) != n + 1:
                raise CaseFormatError(f"gencost row declares {n} coefficients but has {len(crow) - 1}", clineno)
            coeffs = tuple(reversed(crow[1:]))
        generators.append(
            Generator(gbus, pmax, pmin, qmax, qmin, status > 0, coeffs, pg, qg, vg)
        )

    branches = []
    for k, (lineno, (f, t, r, x, b, tap, shift, status)) in enumerate(tables["branch"]):
        f = _as_int(f, lineno, "from bus")
        t = _as_int(t, lineno, "to bus")
        for end in (f, t):
            if end not in seen:
                raise CaseFormatError(f"branch {k} references unknown bus {end}", lineno)
        branches.append(Branch(f, t, r, x, b, tap if tap != 0 else 1.0, shift, status > 0))

    return Network(base_mva, buses, branches, generators, name=headers.get("name", ""))


def _fmt(v: float) -> str:
    return repr(float(v)) if v != int(v) or abs(v) >= 1e15 else str(int(v))


def serialize_case(net: Network) -> str:
    """Inverse of :func:`parse_case` (exact float round trip)."""
    out = []
    if net.name:
        out.append(f"name = {net.name}")
    out.append(f"base_mva = {_fmt(net.base_mva)}")
    out += ["", "[bus]", "# " + " ".join(_TABLE_COLUMNS["bus"])]
    for b in net.buses:
        vals = (b.id, int(b.kind), b.p_load, b.q_load, b.g_shunt, b.b_shunt, b.v_mag_init, b.v_ang_init, b.base_kv)
        out.append(" ".join(_fmt(v) for v in vals))
    out += ["", "[gen]", "# " + " ".join(_TABLE_COLUMNS["gen"])]
    for g in net.generators:
        vals = (g.bus, g.p_gen, g.q_gen, g.q_max, g.q_min, g.v_set, g.p_max, g.p_min, int(g.in_service))
        out.append(" ".join(_fmt(v) for v in vals))
    out += ["", "[branch]", "# " + " ".join(_TABLE_COLUMNS["branch"])]
    for br in net.branches:
        vals = (br.from_bus, br.to_bus, br.r, br.x, br.b_charging, br.tap_ratio, br.phase_shift, int(br.in_service))
        out.append(" ".join(_fmt(v) for v in vals))
    out += ["", "[gencost]", "# ncost c(n-1) ... c0"]
    for g in net.generators:
        coeffs = list(reversed(g.cost_coeffs))
        out.append(" ".join(_fmt(v) for v in [len(coeffs), *coeffs]))
    return "\n".join(out) + "\n"


def load_case(path) -> Network:
    """Read a case file from ``path``, or a builtin case by name (``ieee14``, ``ieee118``)."""
    p = Path(path)
    if not p.exists() and str(path) in _BUILTIN:
        return builtin_case(str(path))
    return parse_case(p.read_text(encoding="utf-8"))


_BUILTIN = {"ieee14": "ieee14.case", "ieee118": "ieee118.case"}


def builtin_case(name: str) -> Network:
    """One of the shipped IEEE test systems."""
    try:
        fname = _BUILTIN[name]
    except KeyError:
        raise KeyError(f"unknown builtin case {name!r}; choose from {sorted(_BUILTIN)}") from None
    text = resources.files("gridcascade.data").joinpath(fname).read_text(encoding="utf-8")
    return parse_case(text)


def validate(net: Network) -> list[str]:
    """Return a description of every broken model invariant (empty when valid)."""
    problems = []
    ids = [b.id for b in net.buses]
    known = set(ids)
    if len(known) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        problems.append(f"duplicate bus ids {dup}")
    for b in net.buses:
        if not b.v_mag_init > 0:
            problems.append(f"bus {b.id}: initial voltage magnitude {b.v_mag_init} must be positive")
    if not any(b.kind == BusKind.SLACK for b in net.buses):
        problems.append("network has no slack bus")
    if not net.generators:
        problems.append("network has no generators")
    for k, br in enumerate(net.branches):
        tag = f"branch {k} ({br.from_bus}-{br.to_bus})"
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                problems.append(f"{tag}: references absent bus {end}")
        if br.from_bus == br.to_bus:
            problems.append(f"{tag}: connects a bus to itself")
        if br.r == 0 and br.x == 0:
            problems.append(f"{tag}: zero impedance")
    for i, g in enumerate(net.generators):
        tag = f"generator {i} (bus {g.bus})"
        if g.bus not in known:
            problems.append(f"{tag}: references absent bus {g.bus}")
        if g.p_min < 0:
            problems.append(f"{tag}: p_min {g.p_min} < 0")
        if g.p_min > g.p_max:
            problems.append(f"{tag}: p_min {g.p_min} > p_max {g.p_max}")
    return problems
