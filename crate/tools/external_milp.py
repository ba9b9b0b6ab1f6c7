#!/usr/bin/env python3
"""Reference external-solver adapter for the MPS bridge.

Reads a free-format MPS file, solves it with scipy's HiGHS-backed MILP
solver and writes a plain name/value solution file with status metadata in
comment lines:

    # status optimal|feasible|infeasible|unbounded
    # objective <value>
    # bound <value>
    <var> <value>
    ...

Usage: external_milp.py MODEL.mps OUT.sol [TIME_LIMIT_SECONDS]
"""

import sys

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import csr_matrix


def parse_mps(path):
    maximize = False
    obj_row = None
    rows = {}  # name -> (sense, index); objective excluded
    row_order = []
    cols = {}  # name -> {"obj": float, "entries": {row: coef}, "integer": bool}
    col_order = []
    rhs = {}
    bounds = {}  # name -> [lo, hi]
    section = None
    integer_mode = False
    expect_objsense_value = False

    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            stripped = line.strip()
            if not stripped or stripped.startswith("*"):
                continue
            head = stripped.split()[0].upper()
            if not line[0].isspace() and head in (
                "NAME",
                "OBJSENSE",
                "ROWS",
                "COLUMNS",
                "RHS",
                "RANGES",
                "BOUNDS",
                "ENDATA",
            ):
                section = head
                expect_objsense_value = section == "OBJSENSE"
                rest = stripped.split()[1:]
                if section == "OBJSENSE" and rest:
                    maximize = rest[0].upper().startswith("MAX")
                    expect_objsense_value = False
                if section == "ENDATA":
                    break
                continue
            if expect_objsense_value:
                maximize = stripped.upper().startswith("MAX")
                expect_objsense_value = False
                continue

            tokens = stripped.split()
            if section == "ROWS":
                sense, name = tokens[0].upper(), tokens[1]
                if sense == "N":
                    if obj_row is None:
                        obj_row = name
                    continue
                rows[name] = (sense, len(row_order))
                row_order.append(name)
            elif section == "COLUMNS":
                if any(t.strip("'").upper() == "MARKER" for t in tokens[1:]):
                    marker = tokens[-1].strip("'").upper()
                    integer_mode = marker == "INTORG"
                    continue
                name = tokens[0]
                if name not in cols:
                    cols[name] = {"obj": 0.0, "entries": {}, "integer": integer_mode}
                    col_order.append(name)
                col = cols[name]
                col["integer"] = col["integer"] or integer_mode
                for rname, val in zip(tokens[1::2], tokens[2::2]):
                    v = float(val)
                    if rname == obj_row:
                        col["obj"] += v
                    else:
                        col["entries"][rname] = col["entries"].get(rname, 0.0) + v
            elif section == "RHS":
                for rname, val in zip(tokens[1::2], tokens[2::2]):
                    if rname != obj_row:
                        rhs[rname] = float(val)
            elif section == "RANGES":
                raise SystemExit("RANGES sections are not supported")
            elif section == "BOUNDS":
                btype = tokens[0].upper()
                name = tokens[2]
                if name not in bounds:
                    default_hi = np.inf
                    bounds[name] = [0.0, default_hi]
                b = bounds[name]
                if btype == "BV":
                    b[0], b[1] = 0.0, 1.0
                    cols[name]["integer"] = True
                elif btype == "LO":
                    b[0] = float(tokens[3])
                elif btype == "UP":
                    b[1] = float(tokens[3])
                elif btype == "FX":
                    b[0] = b[1] = float(tokens[3])
                elif btype == "MI":
                    b[0] = -np.inf
                elif btype == "PL":
                    b[1] = np.inf
                else:
                    raise SystemExit(f"unsupported bound type {btype}")

    n = len(col_order)
    c = np.array([cols[name]["obj"] for name in col_order])
    integrality = np.array([1 if cols[name]["integer"] else 0 for name in col_order])
    lo = np.array([bounds.get(name, [0.0, np.inf])[0] for name in col_order])
    hi = np.array([bounds.get(name, [0.0, np.inf])[1] for name in col_order])

    data, indices, indptr = [], [], [0]
    con_lo, con_hi = [], []
    for rname in row_order:
        sense, _ = rows[rname]
        b = rhs.get(rname, 0.0)
        if sense == "L":
            con_lo.append(-np.inf)
            con_hi.append(b)
        elif sense == "G":
            con_lo.append(b)
            con_hi.append(np.inf)
        else:
            con_lo.append(b)
            con_hi.append(b)
    coo_r, coo_c, coo_v = [], [], []
    for j, name in enumerate(col_order):
        for rname, v in cols[name]["entries"].items():
            coo_r.append(rows[rname][1])
            coo_c.append(j)
            coo_v.append(v)
    a = csr_matrix((coo_v, (coo_r, coo_c)), shape=(len(row_order), n))
    del data, indices, indptr
    return {
        "maximize": maximize,
        "names": col_order,
        "c": c,
        "integrality": integrality,
        "lo": lo,
        "hi": hi,
        "A": a,
        "con_lo": np.array(con_lo),
        "con_hi": np.array(con_hi),
    }


def main():
    if len(sys.argv) < 3:
        raise SystemExit(__doc__)
    mps_path, sol_path = sys.argv[1], sys.argv[2]
    time_limit = float(sys.argv[3]) if len(sys.argv) > 3 else None

    p = parse_mps(mps_path)
    sign = -1.0 if p["maximize"] else 1.0
    options = {"presolve": True}
    if time_limit is not None:
        options["time_limit"] = time_limit

    constraints = None
    if p["A"].shape[0] > 0:
        constraints = LinearConstraint(p["A"], p["con_lo"], p["con_hi"])
    res = milp(
        sign * p["c"],
        constraints=constraints,
        integrality=p["integrality"],
        bounds=Bounds(p["lo"], p["hi"]),
        options=options,
    )

    status_map = {0: "optimal", 1: "feasible", 2: "infeasible", 3: "unbounded"}
    status = status_map.get(res.status, "feasible" if res.x is not None else "infeasible")
    if res.x is None and status not in ("infeasible", "unbounded"):
        status = "infeasible"

    with open(sol_path, "w") as out:
        out.write(f"# status {status}\n")
        if res.x is not None:
            obj = float(np.dot(p["c"], res.x))
            out.write(f"# objective {obj!r}\n")
            bound = getattr(res, "mip_dual_bound", None)
            if bound is not None:
                out.write(f"# bound {sign * float(bound)!r}\n")
            elif status == "optimal":
                out.write(f"# bound {obj!r}\n")
            for name, value in zip(p["names"], res.x):
                v = float(value)
                out.write(f"{name} {round(v) if abs(v - round(v)) < 1e-9 else v!r}\n")


if __name__ == "__main__":
    main()
