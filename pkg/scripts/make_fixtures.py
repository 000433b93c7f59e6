"""Regenerate the shipped IEEE case files and the reference power-flow solutions.

Needs PYPOWER (and a numpy it runs on), which is not a package dependency::

    python scripts/make_fixtures.py

The 118-bus system has seven double-circuit corridors; each pair is merged
into one equivalent branch (parallel series admittances, summed charging),
giving 179 branches.  The reference solutions come from PYPOWER's Newton
solver on the unmerged data with generator Q limits enforced, so they are
independent of this package's solver.  The slack unit's reactive limits are
lifted for the reference run: only PV units switch to PQ at their limits.
"""

import csv
from collections import OrderedDict
from pathlib import Path

import numpy as np
from pypower.api import case14, case118, ppoption, runpf

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "src" / "gridcascade" / "data"
REF = ROOT / "tests" / "data"


def fmt(v):
    v = float(v)
    return str(int(v)) if v == int(v) and abs(v) < 1e15 else repr(v)


def merge_parallel(branch):
    groups = OrderedDict()
    for row in branch:
        key = tuple(sorted((int(row[0]), int(row[1]))))
        groups.setdefault(key, []).append(row)
    merged = []
    for rows in groups.values():
        if len(rows) == 1:
            merged.append(rows[0])
            continue
        assert all(r[8] == 0 and r[9] == 0 for r in rows), "only plain lines are merged"
        y = sum(1.0 / complex(r[2], r[3]) for r in rows)
        z = 1.0 / y
        out = rows[0].copy()
        out[2], out[3] = z.real, z.imag
        out[4] = sum(r[4] for r in rows)
        merged.append(out)
    return np.array(merged)


def write_case(ppc, name, title, branch):
    lines = [f"# {title}", f"name = {name}", f"base_mva = {fmt(ppc['baseMVA'])}", "", "[bus]",
             "# id type pd qd gs bs vm va base_kv"]
    for b in ppc["bus"]:
        lines.append(" ".join(fmt(b[i]) for i in (0, 1, 2, 3, 4, 5, 7, 8, 9)))
    lines += ["", "[gen]", "# bus pg qg qmax qmin vg pmax pmin status"]
    for g in ppc["gen"]:
        lines.append(" ".join(fmt(g[i]) for i in (0, 1, 2, 3, 4, 5, 8, 9, 7)))
    lines += ["", "[branch]", "# from to r x b tap shift status"]
    for br in branch:
        lines.append(" ".join(fmt(br[i]) for i in (0, 1, 2, 3, 4, 8, 9, 10)))
    lines += ["", "[gencost]", "# ncost c(n-1) ... c0"]
    for c in ppc["gencost"]:
        assert c[0] == 2, "polynomial costs only"
        n = int(c[3])
        lines.append(" ".join(fmt(v) for v in [n, *c[4:4 + n]]))
    (DATA / f"{name}.case").write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_reference(ppc, name):
    ppc = {k: (v.copy() if hasattr(v, "copy") else v) for k, v in ppc.items()}
    slack_bus = int(ppc["bus"][ppc["bus"][:, 1] == 3][0, 0])
    # the slack absorbs reactive mismatch without limits; only PV units switch to PQ
    at_slack = ppc["gen"][:, 0] == slack_bus
    ppc["gen"][at_slack, 3] = 9999.0
    ppc["gen"][at_slack, 4] = -9999.0
    opt = ppoption(VERBOSE=0, OUT_ALL=0, ENFORCE_Q_LIMS=1, PF_TOL=1e-10)
    res, ok = runpf(ppc, opt)
    assert ok
    with open(REF / f"{name}_reference.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bus", "vm_pu", "va_deg"])
        for b in res["bus"]:
            w.writerow([int(b[0]), repr(float(b[7])), repr(float(b[8]))])
    slack_p = float(res["gen"][res["gen"][:, 0] == slack_bus][0, 1])
    (REF / f"{name}_slack_p.txt").write_text(repr(slack_p) + "\n")


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    REF.mkdir(parents=True, exist_ok=True)
    c14 = case14()
    write_case(c14, "ieee14", "IEEE 14-bus test system", c14["branch"])
    write_reference(c14, "ieee14")
    c118 = case118()
    write_case(c118, "ieee118", "IEEE 118-bus test system, double circuits merged", merge_parallel(c118["branch"]))
    write_reference(c118, "ieee118")


if __name__ == "__main__":
    main()
