"""Deterministic writers for fields, networks, and run reports.

All writers emit stable, timestamp-free output so repeated runs of the
same configuration produce byte-identical files.
"""

from __future__ import annotations

import json

import numpy as np


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def write_vtk(path, space, U, P, point_fields=None):
    """Legacy ASCII unstructured-grid file with vertex velocity vectors and
    pressure; point_fields maps extra names to (nv,) or (nv, 2) arrays."""
    mesh = space.mesh
    nv = mesh.n_vertices
    ns = space.n_scalar
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("pore-scale flow fields\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{_fmt(x)} {_fmt(y)} 0\n")
        nt = mesh.n_triangles
        fh.write(f"CELLS {nt} {4 * nt}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {nt}\n")
        for _ in range(nt):
            fh.write("5\n")
        fh.write(f"POINT_DATA {nv}\n")
        fh.write("VECTORS velocity double\n")
        for k in range(nv):
            fh.write(f"{_fmt(U[k])} {_fmt(U[ns + k])} 0\n")
        fh.write("SCALARS pressure double 1\n")
        fh.write("LOOKUP_TABLE default\n")
        for k in range(nv):
            fh.write(f"{_fmt(P[k])}\n")
        for name in sorted(point_fields or {}):
            data = np.asarray(point_fields[name])
            if data.ndim == 2:
                fh.write(f"VECTORS {name} double\n")
                for row in data:
                    fh.write(f"{_fmt(row[0])} {_fmt(row[1])} 0\n")
            else:
                fh.write(f"SCALARS {name} double 1\n")
                fh.write("LOOKUP_TABLE default\n")
                for v in data:
                    fh.write(f"{_fmt(v)}\n")


def write_json(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, header, rows):
    """Rows of mixed values; floats are written in full precision."""
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            out = []
            for v in row:
                if isinstance(v, float):
                    out.append(_fmt(v))
                else:
                    out.append(str(v))
            fh.write(",".join(out) + "\n")


def write_network_csv(basepath, net, solution=None):
    """pores.csv and throats.csv for a pore network, plus pressures.csv and
    fluxes.csv when a solution is given."""
    basepath = str(basepath)
    rows = []
    for k in range(net.n_pores):
        role = "interior"
        if net.inlet[k]:
            role = "inlet"
        elif net.outlet[k]:
            role = "outlet"
        rows.append((k, float(net.positions[k, 0]), float(net.positions[k, 1]), role))
    write_csv(basepath + "_pores.csv", ["id", "x", "y", "role"], rows)
    write_csv(
        basepath + "_throats.csv",
        ["i", "j", "g", "length", "width"],
        [(i, j, float(g), float(L), float(w)) for i, j, g, L, w in net.throats],
    )
    if solution is not None:
        write_csv(
            basepath + "_pressures.csv",
            ["id", "pressure"],
            [(k, float(p)) for k, p in enumerate(solution.pressures)],
        )
        write_csv(
            basepath + "_fluxes.csv",
            ["i", "j", "flux"],
            [
                (i, j, float(q))
                for (i, j, _, _, _), q in zip(net.throats, solution.throat_fluxes)
            ],
        )


def write_tractions_csv(path, tractions: dict):
    write_csv(
        path,
        ["interface", "traction"],
        [(a, float(tractions[a])) for a in sorted(tractions)],
    )


def write_comparison_csv(path, comparison: dict):
    write_csv(
        path,
        ["interface", "traction_ddpnm", "traction_npnm"],
        [(a, pd, pn) for a, pd, pn in comparison["pairs"]],
    )
