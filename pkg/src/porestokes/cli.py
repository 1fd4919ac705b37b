"""Command-line pipeline: geometry to mesh to solver to reports.

Exit codes: 0 success, 2 bad input (geometry, mesh, files), 3 numerical
failure (solver or calibration).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .calibrate import (
    CalibrationError,
    FitOptions,
    build_npnm,
    calibration_target,
    compare_tractions,
    fit_half_throats,
)
from .cpnm import (
    DisconnectedNetworkError,
    NetworkError,
    network_from_topology,
    solve_network,
)
from .ddpnm import DdpnmError, result_report, run_ddpnm
from .geometry import (
    GeometryError,
    extract_topology,
    load_geometry,
    perturb_interfaces,
    place_interfaces,
)
from .meshkit import MeshError, build_fitted_mesh, build_structured_mesh, read_mesh, refine
from .reporting import (
    write_comparison_csv,
    write_csv,
    write_json,
    write_network_csv,
    write_tractions_csv,
    write_vtk,
)
from .stokesfem import (
    SolverError,
    boundary_flux,
    error_norms,
    field_norms,
    solve_global,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3

_SOLVER_ERRORS = (SolverError, DdpnmError, NetworkError, CalibrationError)
_INPUT_ERRORS = (
    GeometryError,
    MeshError,
    OSError,
    json.JSONDecodeError,
    KeyError,
    TypeError,
    ValueError,
)


def _configure_logging():
    level_name = os.environ.get("PORESTOKES_LOG", "WARNING").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _add_mesh_args(p):
    p.add_argument("--config", default=None,
                   help="JSON file of flag defaults; explicit flags override")
    p.add_argument("--structured-h", type=float, default=None,
                   help="grid pitch for structured meshing of the geometry")
    p.add_argument("--mesh-nodes", default=None, help="vertex file (.node)")
    p.add_argument("--mesh-eles", default=None, help="element file (.ele)")
    p.add_argument("--mesh-edges", default=None, help="edge tag file (.edge)")
    p.add_argument("--refine", type=int, default=0,
                   help="uniform refinement passes applied after meshing")
    p.add_argument("--perturb", type=float, default=None,
                   help="interface endpoint perturbation radius")
    p.add_argument("--seed", type=int, default=None,
                   help="perturbation seed (default: geometry seed)")


def _add_run_args(p):
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--workers", type=int, default=None,
                   help="thread pool size for per-pore work")
    p.add_argument("--solver", choices=("direct", "schur-cg"), default="direct")
    p.add_argument("--tol-solve", type=float, default=1e-10,
                   help="relative residual bound for linear solves")
    p.add_argument("--tol-balance", type=float, default=1e-10,
                   help="relative bound for per-pore flux balance")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="porestokes",
        description="Pore-scale Stokes flow: monolithic FEM, "
                    "domain-decomposition pore networks, classical pore "
                    "networks, and network calibration.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-fem", help="monolithic finite-element solve")
    p.add_argument("--geometry", required=True)
    _add_mesh_args(p)
    _add_run_args(p)
    p.set_defaults(func=cmd_solve_fem)

    p = sub.add_parser("solve-ddpnm", help="domain-decomposition network solve")
    p.add_argument("--geometry", required=True)
    _add_mesh_args(p)
    _add_run_args(p)
    p.add_argument("--reference", action="store_true",
                   help="also solve monolithically and report field errors")
    p.set_defaults(func=cmd_solve_ddpnm)

    p = sub.add_parser("solve-cpnm", help="classical pore-network solve")
    p.add_argument("--geometry", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--config", default=None,
                   help="JSON file of flag defaults; explicit flags override")
    p.set_defaults(func=cmd_solve_cpnm)

    p = sub.add_parser("calibrate", help="fit a network to the "
                                         "domain-decomposition flux maps")
    p.add_argument("--geometry", default=None)
    _add_mesh_args(p)
    _add_run_args(p)
    p.add_argument("--from-report", default=None,
                   help="reuse a prior solve-ddpnm report instead of solving")
    p.add_argument("--tol-fit", type=float, default=1e-10,
                   help="relative objective change stopping the fit")
    p.add_argument("--fit-max-iters", type=int, default=5000)
    p.set_defaults(func=cmd_calibrate)
    return ap


def _solver_name(args) -> str:
    return "schur_cg" if args.solver == "schur-cg" else "direct"


def _make_mesh(spec, args):
    files = (args.mesh_nodes, args.mesh_eles, args.mesh_edges)
    if any(files):
        if not all(files):
            raise MeshError("--mesh-nodes, --mesh-eles, --mesh-edges are all required")
        if args.structured_h is not None:
            raise MeshError("choose one mesh source: files or --structured-h")
        if args.perturb:
            raise MeshError("--perturb requires --structured-h meshing")
        mesh = read_mesh(args.mesh_nodes, args.mesh_eles, args.mesh_edges)
    else:
        if args.structured_h is None:
            raise MeshError("a mesh source is required: --structured-h or --mesh-* files")
        topo = extract_topology(spec)
        segments = place_interfaces(spec, topo)
        if args.perturb:
            seed = args.seed if args.seed is not None else spec.seed
            segments = perturb_interfaces(spec, segments, args.perturb, seed)
            mesh = build_fitted_mesh(spec, segments, args.structured_h)
        else:
            mesh = build_structured_mesh(spec, segments, args.structured_h)
    for _ in range(max(args.refine, 0)):
        mesh = refine(mesh)
    return mesh


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_solve_fem(args) -> int:
    spec = load_geometry(args.geometry)
    mesh = _make_mesh(spec, args)
    out = _outdir(args)
    field, info = solve_global(
        mesh, nu=spec.nu, p_in=spec.p_in, p_out=spec.p_out,
        method=_solver_name(args), rtol=args.tol_solve,
    )
    qin = boundary_flux(field, "IN")
    qout = boundary_flux(field, "OUT")
    norms = field_norms(field.space, field.U, field.P)
    write_vtk(os.path.join(out, "fem_field.vtk"), field.space, field.U, field.P)
    write_csv(
        os.path.join(out, "fem_norms.csv"),
        ["h1_u", "l2_p", "combined"],
        [(norms["h1_u"], norms["l2_p"], norms["combined"])],
    )
    write_json(
        os.path.join(out, "fem_summary.json"),
        {
            "h": mesh.h,
            "n_vertices": mesh.n_vertices,
            "n_triangles": mesh.n_triangles,
            "flux_in": qin,
            "flux_out": qout,
            "solver": info,
            "norms": norms,
        },
    )
    print(f"fem: flux_in={qin:.12g} flux_out={qout:.12g} "
          f"triangles={mesh.n_triangles} h={mesh.h:.6g}")
    return EXIT_OK


def cmd_solve_ddpnm(args) -> int:
    spec = load_geometry(args.geometry)
    mesh = _make_mesh(spec, args)
    out = _outdir(args)
    result = run_ddpnm(
        mesh, nu=spec.nu, p_in=spec.p_in, p_out=spec.p_out,
        workers=args.workers, rtol=args.tol_solve, balance_rtol=args.tol_balance,
    )
    report = result_report(result)
    gspace, U, P = result.stitched()
    extra = None
    if args.reference:
        ref, _ = solve_global(
            mesh, nu=spec.nu, p_in=spec.p_in, p_out=spec.p_out,
            method=_solver_name(args), rtol=args.tol_solve,
        )
        errs = error_norms(gspace, U, P, ref.U, ref.P)
        report["errors_vs_reference"] = errs
        nv = gspace.n_vertices
        ns = gspace.n_scalar
        dvel = np.stack([U[:nv] - ref.U[:nv], U[ns:ns + nv] - ref.U[ns:ns + nv]], axis=1)
        extra = {"velocity_error": dvel, "pressure_error": P - ref.P}
        write_vtk(os.path.join(out, "ddpnm_reference.vtk"), ref.space, ref.U, ref.P)
    write_vtk(os.path.join(out, "ddpnm_field.vtk"), gspace, U, P, point_fields=extra)
    write_tractions_csv(os.path.join(out, "ddpnm_tractions.csv"), result.tractions)
    write_json(os.path.join(out, "ddpnm_report.json"), report)
    msg = (f"ddpnm: mode={result.mode} interfaces={len(result.indexing.alphas)} "
           f"flux_in={result.flux_in:.12g} flux_out={result.flux_out:.12g}")
    if args.reference:
        msg += f" rel_error={report['errors_vs_reference']['rel']:.6g}"
    print(msg)
    return EXIT_OK


def cmd_solve_cpnm(args) -> int:
    spec = load_geometry(args.geometry)
    out = _outdir(args)
    topo = extract_topology(spec)
    net = network_from_topology(topo, mu=spec.nu)
    sol = solve_network(net, spec.p_in, spec.p_out)
    write_network_csv(os.path.join(out, "cpnm"), net, sol)
    write_json(
        os.path.join(out, "cpnm_summary.json"),
        {
            "n_pores": net.n_pores,
            "n_throats": len(net.throats),
            "inlet_flux": sol.inlet_flux,
            "outlet_flux": sol.outlet_flux,
            "imbalance": sol.imbalance,
            "dropped_throats": sol.dropped_throats,
        },
    )
    print(f"cpnm: pores={net.n_pores} throats={len(net.throats)} "
          f"flux_in={sol.inlet_flux:.12g}")
    return EXIT_OK


def _report_inputs(report: dict):
    """Per-pore targets and face descriptors from a solver report."""
    pores = report.get("pores", [])
    ids = []
    gmats = []
    faces = []
    for entry in pores:
        ids.append(entry["pore"])
        gmats.append(np.array(entry["flux_map"], dtype=float))
        faces.append([(f["kind"], f["interface"]) for f in entry["faces"]])
    tract = {int(a): float(v) for a, v in report.get("tractions", {}).items()}
    return ids, gmats, faces, tract, report["p_in"], report["p_out"]


def cmd_calibrate(args) -> int:
    out = _outdir(args)
    if args.from_report:
        with open(args.from_report) as fh:
            report = json.load(fh)
        ids, gmats, faces, dd_tract, p_in, p_out = _report_inputs(report)
    else:
        if not args.geometry:
            raise MeshError("either --geometry or --from-report is required")
        spec = load_geometry(args.geometry)
        mesh = _make_mesh(spec, args)
        result = run_ddpnm(
            mesh, nu=spec.nu, p_in=spec.p_in, p_out=spec.p_out,
            workers=args.workers, rtol=args.tol_solve,
            balance_rtol=args.tol_balance,
        )
        report = result_report(result)
        ids, gmats, faces, dd_tract, p_in, p_out = _report_inputs(report)

    if not ids:
        write_json(os.path.join(out, "calibration.json"),
                   {"note": "no pore flux maps available; nothing to fit"})
        print("calibrate: no pores to fit")
        return EXIT_OK

    opts = FitOptions(max_iters=args.fit_max_iters, tol=args.tol_fit)

    def fit_one(item):
        pid, G = item
        T = calibration_target(G, pore_id=pid)
        return fit_half_throats(T, opts, pore_id=pid)

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        fits = list(pool.map(fit_one, zip(ids, gmats)))

    npnm = build_npnm(fits, faces, p_in, p_out)
    comparison = compare_tractions(npnm.tractions, dd_tract)
    payload = {
        "pores": [
            {
                "pore": fit.pore_id,
                "g": [float(v) for v in fit.g],
                "objective": float(fit.objective),
                "history_tail": [float(v) for v in fit.history[-5:]],
                "iterations": fit.iterations,
                "converged": fit.converged,
                "restarted": fit.restarted,
            }
            for fit in fits
        ],
        "node_pressures": {str(k): v for k, v in sorted(npnm.node_pressures.items())},
        "face_conductance": {str(a): g for a, g in sorted(npnm.face_conductance.items())},
        "dropped_faces": npnm.dropped,
        "comparison": {
            "rms_rel": comparison["rms_rel"],
            "rank_correlation": comparison["rank_correlation"],
            "max_abs_dev": comparison["max_abs_dev"],
            "n": comparison["n"],
        },
    }
    write_json(os.path.join(out, "calibration.json"), payload)
    write_comparison_csv(os.path.join(out, "calibration_comparison.csv"), comparison)
    print(f"calibrate: pores={len(fits)} rank_correlation="
          f"{comparison['rank_correlation']:.4f} rms_rel={comparison['rms_rel']:.6g}")
    return EXIT_OK


def _merge_config(argv):
    """Expand --config FILE into flag tokens placed right after the
    subcommand, so flags given on the command line override the file."""
    argv = list(argv)
    if "--config" not in argv:
        return argv
    k = argv.index("--config")
    if k + 1 >= len(argv):
        raise MeshError("--config requires a file path")
    path = argv[k + 1]
    del argv[k:k + 2]
    if "--config" in argv:
        raise MeshError("--config may be given once")
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise MeshError(f"config file {path} must hold a JSON object")
    tokens = []
    for key in sorted(cfg):
        val = cfg[key]
        flag = "--" + str(key).replace("_", "-")
        if val is None:
            continue
        if isinstance(val, bool):
            if val:
                tokens.append(flag)
        else:
            tokens.append(flag)
            tokens.append(str(val))
    for pos, tok in enumerate(argv):
        if not tok.startswith("-"):
            return argv[:pos + 1] + tokens + argv[pos + 1:]
    return argv + tokens


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(_merge_config(
            sys.argv[1:] if argv is None else argv))
        return args.func(args)
    except DisconnectedNetworkError as exc:
        # geometry whose void space strands a pore: an input defect
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _SOLVER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
