"""Taylor-Hood finite elements for incompressible Stokes flow.

Velocity uses quadratic triangles (vertex plus edge-midpoint nodes),
pressure linear triangles on the vertices.  The viscous form integrates
the full velocity gradient, nu * grad(u):grad(v), so the natural boundary
condition on open faces prescribes the normal traction of
sigma = -p I + nu grad(u); with zero tangential traction that reduces to
a prescribed pressure level, and unidirectional channel flow is an exact
solution of the discrete problem.

Scalar nodes are numbered vertices first, then edge midpoints; a velocity
degree of freedom is comp * n_scalar + node.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as sla

from .meshkit import (
    Face,
    Mesh,
    TAG_INLET,
    TAG_OUTLET,
    TAG_WALL,
    edge_triangle_map,
    triangle_areas,
)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Linear solve failed or produced an unacceptable residual."""


# degree-4 symmetric 6-point triangle rule (weights sum to one, applied
# against the physical element area)
_QA1 = 0.445948490915965
_QA2 = 0.091576213509771
QUAD_W = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)
QUAD_BARY = np.array(
    [
        [1.0 - 2.0 * _QA1, _QA1, _QA1],
        [_QA1, 1.0 - 2.0 * _QA1, _QA1],
        [_QA1, _QA1, 1.0 - 2.0 * _QA1],
        [1.0 - 2.0 * _QA2, _QA2, _QA2],
        [_QA2, 1.0 - 2.0 * _QA2, _QA2],
        [_QA2, _QA2, 1.0 - 2.0 * _QA2],
    ]
)

# 3-point Gauss rule on [0, 1], exact through degree five
_EG = 0.5 * np.sqrt(3.0 / 5.0)
EDGE_QP = np.array([0.5 - _EG, 0.5, 0.5 + _EG])
EDGE_QW = np.array([5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0])


def p2_values(bary):
    """Quadratic basis at barycentric points; columns follow node order
    [v0, v1, v2, m01, m12, m20]."""
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.stack(
        [
            l0 * (2.0 * l0 - 1.0),
            l1 * (2.0 * l1 - 1.0),
            l2 * (2.0 * l2 - 1.0),
            4.0 * l0 * l1,
            4.0 * l1 * l2,
            4.0 * l2 * l0,
        ],
        axis=1,
    )


def p2_reference_gradients(bary):
    """Gradients of the quadratic basis w.r.t. reference coordinates
    (xi, eta) = (lambda1, lambda2); shape (nq, 6, 2)."""
    g = np.empty((len(bary), 6, 2))
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    l = bary
    for q in range(len(bary)):
        l0, l1, l2 = l[q]
        g[q, 0] = (4.0 * l0 - 1.0) * dl[0]
        g[q, 1] = (4.0 * l1 - 1.0) * dl[1]
        g[q, 2] = (4.0 * l2 - 1.0) * dl[2]
        g[q, 3] = 4.0 * (l1 * dl[0] + l0 * dl[1])
        g[q, 4] = 4.0 * (l2 * dl[1] + l1 * dl[2])
        g[q, 5] = 4.0 * (l0 * dl[2] + l2 * dl[0])
    return g


def p1_values(bary):
    return np.array(bary, dtype=float)


class FESpace:
    """Taylor-Hood space on a triangle mesh."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        tris = mesh.triangles
        nv = mesh.n_vertices
        pairs = np.stack(
            [tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=1
        ).reshape(-1, 2)
        pairs.sort(axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        self.edges = edges
        self.edge_index = {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}
        self.tri_dofs = np.hstack(
            [tris, nv + inverse.reshape(len(tris), 3)]
        ).astype(np.int64)
        self.n_vertices = nv
        self.n_edges = len(edges)
        self.n_scalar = nv + len(edges)
        self.n_u = 2 * self.n_scalar
        self.n_p = nv
        self._qdata = None

    def dof(self, node: int, comp: int) -> int:
        return comp * self.n_scalar + node

    def node_coords(self) -> np.ndarray:
        mids = 0.5 * (
            self.mesh.vertices[self.edges[:, 0]] + self.mesh.vertices[self.edges[:, 1]]
        )
        return np.vstack([self.mesh.vertices, mids])

    def edge_node(self, a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        return self.n_vertices + self.edge_index[key]


def build_space(mesh: Mesh) -> FESpace:
    return FESpace(mesh)


class _QuadData:
    """Per-element geometry and basis data at the volume quadrature points."""

    def __init__(self, space: FESpace):
        mesh = space.mesh
        tris = mesh.triangles
        a = mesh.vertices[tris[:, 0]]
        b = mesh.vertices[tris[:, 1]]
        c = mesh.vertices[tris[:, 2]]
        J = np.empty((len(tris), 2, 2))
        J[:, :, 0] = b - a
        J[:, :, 1] = c - a
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if not (det > 0).all():
            raise SolverError("mesh contains inverted triangles")
        inv_t = np.empty_like(J)  # J^{-T}
        inv_t[:, 0, 0] = J[:, 1, 1] / det
        inv_t[:, 0, 1] = -J[:, 1, 0] / det
        inv_t[:, 1, 0] = -J[:, 0, 1] / det
        inv_t[:, 1, 1] = J[:, 0, 0] / det
        self.area = 0.5 * det
        gref = p2_reference_gradients(QUAD_BARY)
        # grad_phys[t, q, i, :] = J^{-T} grad_ref[q, i, :]
        self.grad = np.einsum("tab,qib->tqia", inv_t, gref)
        self.p2v = p2_values(QUAD_BARY)
        self.p1v = p1_values(QUAD_BARY)
        self.w = QUAD_W


def _quad_data(space: FESpace) -> _QuadData:
    if space._qdata is None:
        space._qdata = _QuadData(space)
    return space._qdata


def assemble(space: FESpace, nu: float):
    """Viscous block and divergence constraint as sparse matrices.

    Returns (A, B): A is 2 n_scalar square, nu * integral grad u : grad v,
    exactly symmetric; B is n_p by n_u for b(v, q) = -integral q div v.
    """
    qd = _quad_data(space)
    nt = len(space.tri_dofs)
    ns, nu_dofs, np_dofs = space.n_scalar, space.n_u, space.n_p

    sw = np.sqrt(nu * qd.area[:, None] * qd.w[None, :])
    X = qd.grad * sw[:, :, None, None]
    Ke = np.einsum("tqia,tqja->tij", X, X)
    rows = np.broadcast_to(space.tri_dofs[:, :, None], (nt, 6, 6))
    cols = np.broadcast_to(space.tri_dofs[:, None, :], (nt, 6, 6))
    K = sparse.coo_matrix(
        (Ke.ravel(), (rows.ravel(), cols.ravel())), shape=(ns, ns)
    ).tocsr()
    A = sparse.block_diag((K, K), format="csr")

    wa = qd.area[:, None] * qd.w[None, :]
    Be = -np.einsum("tq,qp,tqjc->tpjc", wa, qd.p1v, qd.grad)
    prow = np.broadcast_to(space.tri_dofs[:, :3, None, None], (nt, 3, 6, 2))
    pcol = (
        np.broadcast_to(space.tri_dofs[:, None, :, None], (nt, 3, 6, 2))
        + ns * np.arange(2)[None, None, None, :]
    )
    B = sparse.coo_matrix(
        (Be.ravel(), (prow.ravel(), pcol.ravel())), shape=(np_dofs, nu_dofs)
    ).tocsr()
    return A, B


def wall_dofs(space: FESpace) -> np.ndarray:
    """Velocity dofs constrained to zero: both components of every node on
    a wall-tagged edge."""
    nodes = set()
    for (a, b), tag in space.mesh.edge_tags.items():
        if tag != TAG_WALL:
            continue
        nodes.add(a)
        nodes.add(b)
        nodes.add(space.edge_node(a, b))
    nodes = np.array(sorted(nodes), dtype=np.int64)
    return np.concatenate([nodes, space.n_scalar + nodes])


def apply_dirichlet(A, B, dofs):
    """Symmetric elimination of homogeneous velocity constraints: zero the
    rows and columns, put ones on the constrained diagonal, zero the
    divergence columns.  Returns modified copies."""
    n = A.shape[0]
    mask = np.ones(n)
    mask[dofs] = 0.0
    D = sparse.diags(mask)
    A_mod = (D @ A @ D + sparse.diags(1.0 - mask)).tocsr()
    B_mod = (B @ D).tocsr()
    return A_mod, B_mod


def _face_items(face):
    if isinstance(face, Face):
        return list(zip(face.edges, face.normals, face.lengths))
    return list(face)


def boundary_face(mesh: Mesh, tag: str) -> Face:
    """Collect the oriented boundary edges carrying a tag into one Face.

    Orientation follows the owning triangle, so outward normals point out
    of the meshed region.
    """
    tag = {"wall": TAG_WALL, "inlet": TAG_INLET, "outlet": TAG_OUTLET}.get(tag, tag)
    e2t = edge_triangle_map(mesh.triangles)
    edges = []
    for t, tri in enumerate(mesh.triangles):
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            key = (a, b) if a < b else (b, a)
            if len(e2t[key]) != 1:
                continue
            if mesh.edge_tags.get(key) == tag:
                edges.append((a, b))
    edges = sorted(edges)
    normals = np.empty((len(edges), 2))
    lengths = np.empty(len(edges))
    for k, (a, b) in enumerate(edges):
        d = mesh.vertices[b] - mesh.vertices[a]
        lengths[k] = np.hypot(*d)
        normals[k] = (d[1] / lengths[k], -d[0] / lengths[k])
    kind = {TAG_INLET: "inlet", TAG_OUTLET: "outlet"}.get(tag, "wall")
    return Face(kind=kind, alpha=None, edges=edges, normals=normals, lengths=lengths)


def neumann_load(space: FESpace, face, phat: float) -> np.ndarray:
    """Load vector of the traction condition on one face: for each velocity
    basis function, -phat * integral over the face of (n . phi)."""
    f = np.zeros(space.n_u)
    vals = np.stack(
        [
            (1.0 - EDGE_QP) * (1.0 - 2.0 * EDGE_QP),
            EDGE_QP * (2.0 * EDGE_QP - 1.0),
            4.0 * EDGE_QP * (1.0 - EDGE_QP),
        ],
        axis=1,
    )  # (nq, [a, b, mid])
    weights = EDGE_QW @ vals  # exact edge integrals of the three edge nodes
    for (a, b), n, length in _face_items(face):
        m = space.edge_node(a, b)
        for node, wgt in zip((a, b, m), weights):
            for comp in range(2):
                f[space.dof(node, comp)] -= phat * n[comp] * wgt * length
    return f


def face_flux(space: FESpace, U: np.ndarray, face) -> float:
    """Volumetric rate through a face, integral of u . n, by Simpson's rule
    on each edge (exact for the quadratic trace)."""
    ns = space.n_scalar
    total = 0.0
    for (a, b), n, length in _face_items(face):
        m = space.edge_node(a, b)
        un = [U[node] * n[0] + U[ns + node] * n[1] for node in (a, b, m)]
        total += length / 6.0 * (un[0] + un[1] + 4.0 * un[2])
    return float(total)


def solve_saddle(
    A_mod,
    B_mod,
    f,
    g=None,
    *,
    pin_pressure: bool = False,
    method: str = "direct",
    rtol: float = 1e-10,
):
    """Solve [[A, B^T], [B, 0]] [U, P] = [f, g] and verify the residual.

    pin_pressure replaces the first pressure equation with P[0] = 0; use it
    only when every boundary is a wall.  Returns (U, P, info).
    """
    n_u, n_p = A_mod.shape[0], B_mod.shape[0]
    if g is None:
        g = np.zeros(n_p)
    if method == "direct":
        K = sparse.bmat([[A_mod, B_mod.T], [B_mod, None]], format="csc")
        if pin_pressure:
            m = np.ones(n_u + n_p)
            m[n_u] = 0.0
            K = (sparse.diags(m) @ K @ sparse.diags(m) + sparse.diags(1.0 - m)).tocsc()
        rhs = np.concatenate([f, g])
        if pin_pressure:
            rhs[n_u] = 0.0
        try:
            lu = sla.splu(K)
            x = lu.solve(rhs)
        except (RuntimeError, ValueError) as exc:
            raise SolverError(f"direct factorization failed: {exc}") from exc
        U, P = x[:n_u], x[n_u:]
    elif method == "schur_cg":
        U, P = _solve_schur_cg(A_mod, B_mod, f, g, pin_pressure)
    else:
        raise SolverError(f"unknown solver method {method!r}")

    res_u = A_mod @ U + B_mod.T @ P - f
    res_p = B_mod @ U - g
    if pin_pressure:
        # the pinned mass equation is redundant (rows of B sum to zero when
        # every boundary is a wall), so exclude it from the check
        res_p = res_p.copy()
        res_p[0] = 0.0
    res_u_norm = np.linalg.norm(res_u)
    res_p_norm = np.linalg.norm(res_p)
    rhs_norm = max(np.linalg.norm(f), np.linalg.norm(g), 1e-300)
    if not np.isfinite(res_u_norm + res_p_norm):
        raise SolverError("solution contains non-finite entries")
    if max(res_u_norm, res_p_norm) > rtol * rhs_norm and rhs_norm > 1e-290:
        raise SolverError(
            f"saddle residual too large: |r_u| = {res_u_norm:.3e}, "
            f"|r_p| = {res_p_norm:.3e}, rhs = {rhs_norm:.3e}"
        )
    info = {
        "method": method,
        "residual_u": float(res_u_norm),
        "residual_p": float(res_p_norm),
        "rhs_norm": float(rhs_norm),
        "n_u": int(n_u),
        "n_p": int(n_p),
        "pinned": bool(pin_pressure),
    }
    return U, P, info


def _solve_schur_cg(A_mod, B_mod, f, g, pin_pressure):
    """Pressure-Schur complement iteration: factor the viscous block once,
    run conjugate gradients on B A^{-1} B^T."""
    try:
        lu = sla.splu(A_mod.tocsc())
    except (RuntimeError, ValueError) as exc:
        raise SolverError(f"viscous block factorization failed: {exc}") from exc

    def s_mv(p):
        y = lu.solve(B_mod.T @ p)
        out = B_mod @ y
        if pin_pressure:
            out = out + 0.0
            out[0] += p[0]
        return out

    n_p = B_mod.shape[0]
    S = sla.LinearOperator((n_p, n_p), matvec=s_mv)
    rhs = B_mod @ lu.solve(f) - g
    if pin_pressure:
        rhs = rhs.copy()
        rhs[0] = 0.0
    P, flag = sla.cg(S, rhs, rtol=1e-13, atol=0.0, maxiter=5000)
    if flag != 0:
        raise SolverError(f"pressure CG did not converge (flag {flag})")
    U = lu.solve(f - B_mod.T @ P)
    return U, P


class FlowField:
    """A velocity/pressure pair on a Taylor-Hood space."""

    def __init__(self, space: FESpace, U: np.ndarray, P: np.ndarray):
        self.space = space
        self.U = U
        self.P = P

    @property
    def vertex_velocity(self) -> np.ndarray:
        ns = self.space.n_scalar
        nv = self.space.n_vertices
        return np.stack([self.U[:nv], self.U[ns : ns + nv]], axis=1)

    @property
    def vertex_pressure(self) -> np.ndarray:
        return self.P


def solve_global(
    mesh: Mesh,
    *,
    nu: float,
    p_in: float,
    p_out: float,
    method: str = "direct",
    rtol: float = 1e-10,
):
    """Monolithic Stokes solve on a tagged mesh: no-slip walls, prescribed
    normal traction on inlet and outlet.  Returns (FlowField, info)."""
    space = build_space(mesh)
    A, B = assemble(space, nu)
    walls = wall_dofs(space)
    Am, Bm = apply_dirichlet(A, B, walls)
    f = np.zeros(space.n_u)
    open_faces = 0
    for tag, phat in ((TAG_INLET, p_in), (TAG_OUTLET, p_out)):
        face = boundary_face(mesh, tag)
        if face.edges:
            open_faces += 1
            f += neumann_load(space, face, phat)
    f[walls] = 0.0  # homogeneous no-slip overrides traction at shared nodes
    pin = open_faces == 0
    if pin:
        log.info("no open boundary faces: pinning one pressure value")
    U, P, info = solve_saddle(Am, Bm, f, pin_pressure=pin, method=method, rtol=rtol)
    info["pinned"] = pin
    return FlowField(space, U, P), info


def boundary_flux(field: FlowField, tag: str) -> float:
    face = boundary_face(field.space.mesh, tag)
    return face_flux(field.space, field.U, face)


def interpolate(space: FESpace, velocity=None, pressure=None):
    """Nodal interpolant of callables velocity(x, y) -> (ux, uy) and
    pressure(x, y) -> p onto the space's coefficient vectors."""
    coords = space.node_coords()
    U = np.zeros(space.n_u)
    if velocity is not None:
        for k, (x, y) in enumerate(coords):
            ux, uy = velocity(x, y)
            U[k] = ux
            U[space.n_scalar + k] = uy
    P = np.zeros(space.n_p)
    if pressure is not None:
        for v, (x, y) in enumerate(space.mesh.vertices):
            P[v] = pressure(x, y)
    return U, P


def energy(space: FESpace, A_raw, U: np.ndarray) -> float:
    """Viscous dissipation a(u, u) evaluated with the unmodified matrix."""
    return float(U @ (A_raw @ U))


def field_norms(space: FESpace, U, P):
    """Size of one field: H1 norm of velocity, L2 norm of pressure."""
    zero_u = np.zeros_like(U)
    zero_p = np.zeros_like(P)
    out = error_norms(space, U, P, zero_u, zero_p)
    return {"h1_u": out["h1_u"], "l2_p": out["l2_p"], "combined": out["combined"]}


def error_norms(space: FESpace, U, P, U_ref, P_ref):
    """Field discrepancy in the combined H1-velocity / L2-pressure norm,
    relative to the reference field's size, by element quadrature."""
    qd = _quad_data(space)
    td = space.tri_dofs
    ns = space.n_scalar
    wa = qd.area[:, None] * qd.w[None, :]

    def h1_sq(V):
        vx = V[td]  # (nt, 6) x-component coefficients
        vy = V[ns + td]
        val_x = vx @ qd.p2v.T  # (nt, nq)
        val_y = vy @ qd.p2v.T
        gx = np.einsum("tqic,ti->tqc", qd.grad, vx)
        gy = np.einsum("tqic,ti->tqc", qd.grad, vy)
        dens = val_x**2 + val_y**2 + (gx**2).sum(axis=2) + (gy**2).sum(axis=2)
        return float((wa * dens).sum())

    def l2_sq(Q):
        vals = Q[td[:, :3]] @ qd.p1v.T
        return float((wa * vals**2).sum())

    du = h1_sq(U - U_ref)
    dp = l2_sq(P - P_ref)
    ru = h1_sq(U_ref)
    rp = l2_sq(P_ref)
    combined = np.sqrt(du + dp)
    reference = np.sqrt(ru + rp)
    return {
        "h1_u": float(np.sqrt(du)),
        "l2_p": float(np.sqrt(dp)),
        "combined": float(combined),
        "reference": float(reference),
        "rel": float(combined / reference) if reference > 0 else float("inf"),
    }
