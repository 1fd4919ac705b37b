"""Domain-decomposition pore-network solver.

Each pore body is solved independently with unit normal-traction loads on
its open faces, yielding a small pressure-to-flux map per pore (the
discrete Dirichlet-to-Neumann map of the Stokes operator).  Interface
pressures are then the unknowns of a small symmetric positive definite
system expressing flux balance across every internal face; solving it and
superposing the stored unit responses reconstructs velocity and pressure
fields everywhere.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as dla
from scipy import sparse
from scipy.sparse import linalg as sla

from .meshkit import Mesh, SubdomainMesh, extract_subdomains
from .stokesfem import (
    FESpace,
    FlowField,
    apply_dirichlet,
    assemble,
    boundary_flux,
    build_space,
    neumann_load,
    solve_global,
    wall_dofs,
)

log = logging.getLogger(__name__)


class DdpnmError(RuntimeError):
    """Coupled pore-network solve failed validation."""


@dataclass
class PoreOperator:
    """Unit traction responses and the pressure-to-flux map of one pore.

    G[r, k] is the outward flux through face r when face k carries a unit
    pressure load and all other faces are free; responses_U/responses_P
    hold the corresponding velocity and pressure coefficient vectors.
    """

    sub: SubdomainMesh
    space: FESpace
    A_raw: sparse.spmatrix
    loads: np.ndarray        # (m, n_u)
    responses_U: np.ndarray  # (m, n_u)
    responses_P: np.ndarray  # (m, n_p)
    G: np.ndarray            # (m, m)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_faces(self) -> int:
        return len(self.sub.faces)


def pore_operator(sub: SubdomainMesh, nu: float, *, rtol: float = 1e-10) -> PoreOperator:
    """Solve one pore for a unit pressure on each face in turn and collect
    the flux responses.  The saddle matrix is factorized once."""
    if not sub.faces:
        raise DdpnmError(f"pore {sub.pore_id} has no open faces")
    space = build_space(sub.mesh)
    A, B = assemble(space, nu)
    walls = wall_dofs(space)
    A_mod, B_mod = apply_dirichlet(A, B, walls)
    n_u, n_p = space.n_u, space.n_p
    K = sparse.bmat([[A_mod, B_mod.T], [B_mod, None]], format="csc")
    try:
        lu = sla.splu(K)
    except (RuntimeError, ValueError) as exc:
        raise DdpnmError(
            f"pore {sub.pore_id} factorization failed: {exc}"
        ) from exc

    m = len(sub.faces)
    loads = np.empty((m, n_u))
    responses_U = np.empty((m, n_u))
    responses_P = np.empty((m, n_p))
    for r, fc in enumerate(sub.faces):
        loads[r] = neumann_load(space, fc, 1.0)
        loads[r, walls] = 0.0  # no-slip nodes carry no traction load
    for r in range(m):
        rhs = np.concatenate([loads[r], np.zeros(n_p)])
        x = lu.solve(rhs)
        U, P = x[:n_u], x[n_u:]
        res = np.linalg.norm(K @ x - rhs)
        scale = max(np.linalg.norm(rhs), 1e-300)
        if not np.isfinite(res) or res > rtol * scale:
            raise DdpnmError(
                f"pore {sub.pore_id} unit solve {r} residual {res:.3e} "
                f"exceeds {rtol:.1e} x {scale:.3e}"
            )
        responses_U[r] = U
        responses_P[r] = P

    G = -loads @ responses_U.T
    diag = validate_dtn(G, pore_id=sub.pore_id)
    return PoreOperator(
        sub=sub,
        space=space,
        A_raw=A,
        loads=loads,
        responses_U=responses_U,
        responses_P=responses_P,
        G=G,
        diagnostics=diag,
    )


def validate_dtn(G: np.ndarray, *, pore_id=None, sym_tol=1e-10, null_tol=1e-10,
                 rank_tol=1e-8) -> dict:
    """Check the structural properties of a pressure-to-flux map.

    Raises DdpnmError when symmetry, the zero row sum, or negative
    semidefiniteness fail; negative off-diagonal entries only log a
    warning.  Returns the measured metrics.
    """
    m = len(G)
    tag = f"pore {pore_id}" if pore_id is not None else "operator"
    norm = np.linalg.norm(G)
    sym = np.linalg.norm(G - G.T)
    if norm > 0 and sym > sym_tol * norm:
        raise DdpnmError(f"{tag}: flux map asymmetry {sym:.3e} vs norm {norm:.3e}")
    ones = np.ones(m)
    null = np.linalg.norm(G @ ones)
    if norm > 0 and null > null_tol * norm:
        raise DdpnmError(f"{tag}: uniform pressure produces net flux {null:.3e}")
    Gs = 0.5 * (G + G.T)
    eig = np.linalg.eigvalsh(Gs) if m else np.empty(0)
    if m and eig[-1] > max(null_tol * max(norm, 1.0), 1e-300):
        raise DdpnmError(f"{tag}: positive eigenvalue {eig[-1]:.3e} in flux map")
    sv = np.linalg.svd(Gs, compute_uv=False) if m else np.empty(0)
    rank = int((sv > rank_tol * sv[0]).sum()) if m and sv[0] > 0 else 0
    if m and rank != m - 1:
        raise DdpnmError(f"{tag}: flux map rank {rank}, expected {m - 1}")
    neg_off = 0.0
    if m > 1:
        off = Gs - np.diag(np.diag(Gs))
        neg_off = float(min(off.min(), 0.0))
        if neg_off < -null_tol * max(norm, 1.0):
            log.warning("%s: negative cross-flux entry %.3e in flux map", tag, neg_off)
    return {
        "m": int(m),
        "norm": float(norm),
        "asymmetry": float(sym),
        "null_residual": float(null),
        "max_eigenvalue": float(eig[-1]) if m else 0.0,
        "rank": rank,
        "min_off_diagonal": neg_off,
    }


# ---------------------------------------------------------------------------
# interface coupling


@dataclass
class InterfaceIndexing:
    """Column layout of the interface pressure unknowns."""

    alphas: list            # sorted interface ids
    column: dict            # interface id -> column
    sides: dict             # interface id -> [(pore index, local face index)]


def interface_indexing(subs) -> InterfaceIndexing:
    sides = {}
    for pi, sub in enumerate(subs):
        for fi, fc in enumerate(sub.unknown_faces):
            sides.setdefault(fc.alpha, []).append((pi, fi))
    for alpha, pair in sides.items():
        if len(pair) != 2:
            raise DdpnmError(
                f"interface {alpha} is shared by {len(pair)} pores, expected 2"
            )
    alphas = sorted(sides)
    column = {a: k for k, a in enumerate(alphas)}
    return InterfaceIndexing(alphas=alphas, column=column, sides=sides)


def known_pressures(sub: SubdomainMesh, p_in: float, p_out: float) -> np.ndarray:
    vals = []
    for fc in sub.known_faces:
        if fc.kind == "inlet":
            vals.append(p_in)
        elif fc.kind == "outlet":
            vals.append(p_out)
        else:
            raise DdpnmError(f"face kind {fc.kind!r} has no prescribed pressure")
    return np.array(vals)


def assemble_schur(ops, indexing: InterfaceIndexing, p_in: float, p_out: float):
    """Flux balance across internal faces as a dense SPD system S p = F."""
    m = len(indexing.alphas)
    S = np.zeros((m, m))
    F = np.zeros(m)
    for op in ops:
        sub = op.sub
        nu_f = sub.n_unknown
        if nu_f == 0:
            continue
        cols = np.array([indexing.column[fc.alpha] for fc in sub.unknown_faces])
        Guu = op.G[:nu_f, :nu_f]
        S[np.ix_(cols, cols)] -= Guu
        if sub.n_unknown < op.n_faces:
            Guk = op.G[:nu_f, nu_f:]
            pk = known_pressures(sub, p_in, p_out)
            F[cols] += Guk @ pk
    return S, F


def solve_interface(S: np.ndarray, F: np.ndarray, *, rtol: float = 1e-12):
    """Dense Cholesky solve of the interface system with a residual check."""
    if len(S) == 0:
        return np.empty(0), {"residual": 0.0, "rhs_norm": 0.0}
    try:
        c, low = dla.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise DdpnmError(f"interface system is not positive definite: {exc}") from exc
    except ValueError as exc:
        raise DdpnmError(f"interface system is malformed: {exc}") from exc
    p = dla.cho_solve((c, low), F)
    res = np.linalg.norm(S @ p - F)
    scale = max(np.linalg.norm(F), 1e-300)
    if res > rtol * scale and np.linalg.norm(F) > 0:
        raise DdpnmError(f"interface residual {res:.3e} exceeds {rtol:.1e} x {scale:.3e}")
    return p, {"residual": float(res), "rhs_norm": float(np.linalg.norm(F))}


def lanczos_smallest_ritz(S: np.ndarray, steps: int = 20) -> float:
    """Smallest Ritz value of a symmetric matrix after a reorthogonalized
    Lanczos recurrence started from the normalized ones vector."""
    n = len(S)
    if n == 0:
        return float("inf")
    steps = min(steps, n)
    V = np.zeros((steps, n))
    alphas = []
    betas = []
    v = np.ones(n) / np.sqrt(n)
    V[0] = v
    w = S @ v
    a = float(v @ w)
    alphas.append(a)
    w = w - a * v
    k = 1
    while k < steps:
        for j in range(k):  # full reorthogonalization
            w = w - (V[j] @ w) * V[j]
        b = float(np.linalg.norm(w))
        if b < 1e-14 * max(1.0, abs(alphas[0])):
            break
        v = w / b
        V[k] = v
        betas.append(b)
        w = S @ v - b * V[k - 1]
        a = float(v @ w)
        alphas.append(a)
        w = w - a * v
        k += 1
    T = np.diag(alphas)
    for j, b in enumerate(betas):
        T[j, j + 1] = b
        T[j + 1, j] = b
    ritz = np.linalg.eigvalsh(T)
    return float(ritz[0])


# ---------------------------------------------------------------------------
# reconstruction and bookkeeping


@dataclass
class PoreField:
    """Reconstructed per-pore solution."""

    pore_id: int
    face_pressures: np.ndarray
    fluxes: np.ndarray  # outward flux per face, ordered like sub.faces
    U: np.ndarray
    P: np.ndarray


def reconstruct(ops, indexing: InterfaceIndexing, p: np.ndarray, p_in: float,
                p_out: float):
    fields = []
    for op in ops:
        sub = op.sub
        nu_f = sub.n_unknown
        loc = np.empty(op.n_faces)
        for fi, fc in enumerate(sub.unknown_faces):
            loc[fi] = p[indexing.column[fc.alpha]]
        if op.n_faces > nu_f:
            loc[nu_f:] = known_pressures(sub, p_in, p_out)
        U = op.responses_U.T @ loc
        P = op.responses_P.T @ loc
        Q = op.G @ loc
        fields.append(
            PoreField(pore_id=sub.pore_id, face_pressures=loc, fluxes=Q, U=U, P=P)
        )
    return fields


def check_balance(ops, fields, indexing: InterfaceIndexing, *, rtol=1e-10,
                  floor=None):
    """Per-pore and per-interface flux balance metrics; raises on per-pore
    imbalance beyond tolerance.  The absolute floor guards near-stagnant
    pores and defaults to a tiny multiple of the largest flux anywhere."""
    if floor is None:
        big = max((float(np.abs(fl.fluxes).max(initial=0.0)) for fl in fields),
                  default=0.0)
        floor = 1e-14 * big + 1e-300
    pore_imbalance = {}
    for op, fl in zip(ops, fields):
        total = float(fl.fluxes.sum())
        scale = float(np.abs(fl.fluxes).sum())
        pore_imbalance[op.sub.pore_id] = (total, scale)
        if abs(total) > rtol * scale + floor:
            raise DdpnmError(
                f"pore {op.sub.pore_id} fluxes do not balance: {total:.3e} "
                f"against magnitude {scale:.3e}"
            )
    face_mismatch = {}
    for alpha, pair in indexing.sides.items():
        q = 0.0
        for pi, fi in pair:
            q += float(fields[pi].fluxes[fi])
        face_mismatch[alpha] = q
    return pore_imbalance, face_mismatch


def stitch_fields(mesh: Mesh, subs, fields):
    """Assemble a global coefficient field from per-pore ones, averaging
    the duplicated interface values.  Returns (space, U, P)."""
    gspace = build_space(mesh)
    gns = gspace.n_scalar
    U = np.zeros(gspace.n_u)
    P = np.zeros(gspace.n_p)
    cu = np.zeros(gns)
    cp = np.zeros(gspace.n_p)
    by_id = {fl.pore_id: fl for fl in fields}
    for sub in subs:
        fl = by_id[sub.pore_id]
        lspace = build_space(sub.mesh)
        nv_l = lspace.n_vertices
        node_map = np.empty(lspace.n_scalar, dtype=np.int64)
        node_map[:nv_l] = sub.l2g
        for k, (a, b) in enumerate(lspace.edges):
            node_map[nv_l + k] = gspace.edge_node(int(sub.l2g[a]), int(sub.l2g[b]))
        U[node_map] += fl.U[: lspace.n_scalar]
        U[gns + node_map] += fl.U[lspace.n_scalar:]
        cu[node_map] += 1.0
        P[sub.l2g] += fl.P
        cp[sub.l2g] += 1.0
    if (cu == 0).any() or (cp == 0).any():
        raise DdpnmError("stitched field leaves uncovered nodes")
    U[:gns] /= cu
    U[gns:] /= cu
    P /= cp
    return gspace, U, P


@dataclass
class DdpnmResult:
    """Everything produced by a coupled run."""

    mode: str                    # "network" or "monolithic"
    mesh: Mesh
    nu: float
    p_in: float
    p_out: float
    subs: list
    operators: list
    indexing: InterfaceIndexing
    tractions: dict              # interface id -> pressure
    fields: list
    pore_imbalance: dict
    face_mismatch: dict
    flux_in: float
    flux_out: float
    schur_info: dict
    monolithic: FlowField = None

    def stitched(self):
        if self.mode == "monolithic":
            f = self.monolithic
            return f.space, f.U, f.P
        return stitch_fields(self.mesh, self.subs, self.fields)


def run_ddpnm(
    mesh: Mesh,
    *,
    nu: float,
    p_in: float,
    p_out: float,
    workers: int = None,
    rtol: float = 1e-10,
    balance_rtol: float = 1e-10,
) -> DdpnmResult:
    """Full pipeline: split the mesh, solve every pore for unit loads in a
    thread pool, balance interface fluxes, reconstruct fields.

    Results are independent of the worker count; pores are merged in a
    fixed order.
    """
    subs = extract_subdomains(mesh)
    n_interfaces = len(mesh.interface_ids())
    if n_interfaces == 0:
        log.info("no internal interfaces: solving the mesh monolithically")
        fld, info = solve_global(mesh, nu=nu, p_in=p_in, p_out=p_out, rtol=rtol)
        qin = boundary_flux(fld, "IN")
        qout = boundary_flux(fld, "OUT")
        return DdpnmResult(
            mode="monolithic",
            mesh=mesh,
            nu=nu,
            p_in=p_in,
            p_out=p_out,
            subs=subs,
            operators=[],
            indexing=InterfaceIndexing(alphas=[], column={}, sides={}),
            tractions={},
            fields=[],
            pore_imbalance={},
            face_mismatch={},
            flux_in=qin,
            flux_out=qout,
            schur_info=info,
            monolithic=fld,
        )

    if workers is not None and workers < 1:
        raise DdpnmError(f"worker count must be positive, got {workers}")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        ops = list(pool.map(lambda s: pore_operator(s, nu, rtol=rtol), subs))

    indexing = interface_indexing(subs)
    S, F = assemble_schur(ops, indexing, p_in, p_out)
    p, schur_info = solve_interface(S, F)
    schur_info["smallest_ritz"] = lanczos_smallest_ritz(S)
    fields = reconstruct(ops, indexing, p, p_in, p_out)
    pore_imbalance, face_mismatch = check_balance(
        ops, fields, indexing, rtol=balance_rtol
    )

    flux_in = 0.0
    flux_out = 0.0
    for op, fl in zip(ops, fields):
        for fi, fc in enumerate(op.sub.faces):
            if fc.kind == "inlet":
                flux_in += float(fl.fluxes[fi])
            elif fc.kind == "outlet":
                flux_out += float(fl.fluxes[fi])

    tractions = {alpha: float(p[indexing.column[alpha]]) for alpha in indexing.alphas}
    return DdpnmResult(
        mode="network",
        mesh=mesh,
        nu=nu,
        p_in=p_in,
        p_out=p_out,
        subs=subs,
        operators=ops,
        indexing=indexing,
        tractions=tractions,
        fields=fields,
        pore_imbalance=pore_imbalance,
        face_mismatch=face_mismatch,
        flux_in=flux_in,
        flux_out=flux_out,
        schur_info=schur_info,
    )


def result_report(result: DdpnmResult) -> dict:
    """JSON-ready summary of a run, stable in ordering and content."""
    pores = []
    for op, fl in zip(result.operators, result.fields):
        sub = op.sub
        faces = []
        for fi, fc in enumerate(sub.faces):
            faces.append(
                {
                    "kind": fc.kind,
                    "interface": fc.alpha,
                    "length": float(fc.length),
                    "pressure": float(fl.face_pressures[fi]),
                    "flux": float(fl.fluxes[fi]),
                }
            )
        pores.append(
            {
                "pore": int(sub.pore_id),
                "faces": faces,
                "flux_map": [[float(x) for x in row] for row in op.G],
                "diagnostics": op.diagnostics,
            }
        )
    report = {
        "mode": result.mode,
        "nu": result.nu,
        "p_in": result.p_in,
        "p_out": result.p_out,
        "n_pores": len(result.subs),
        "n_interfaces": len(result.indexing.alphas),
        "tractions": {str(a): result.tractions[a] for a in result.indexing.alphas},
        "flux_in": result.flux_in,
        "flux_out": result.flux_out,
        "flux_gap": result.flux_in + result.flux_out,
        "interface_mismatch": {
            str(a): result.face_mismatch[a] for a in sorted(result.face_mismatch)
        },
        "schur": result.schur_info,
        "pores": pores,
    }
    return report
