"""Conforming triangle meshes of the void space, tagged for flow solves.

Meshes are uniform-grid triangulations: each void grid square splits into
two triangles along a diagonal.  Interface segments must be resolved
exactly by mesh edges; axis-aligned segments fall on grid lines, while
oblique straight segments (from perturbation studies) are accommodated by
sliding the nearest grid vertex on each crossed grid line onto the segment
and choosing cell diagonals so the segment is tiled by edges.

Edge tags: "W" (no-slip wall), "IN" (inlet), "OUT" (outlet), "I<alpha>"
(internal interface with 1-based id alpha).  Element subdomain labels
number the pore bodies.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import GeometrySpec, extend_segment_to_boundaries

log = logging.getLogger(__name__)

TAG_WALL = "W"
TAG_INLET = "IN"
TAG_OUTLET = "OUT"

_ALIGN_TOL = 1e-9


class MeshError(ValueError):
    """Mesh construction or validation failure."""


def interface_tag(alpha: int) -> str:
    return f"I{alpha}"


def parse_interface_tag(tag: str):
    if tag.startswith("I") and tag[1:].isdigit():
        return int(tag[1:])
    return None


@dataclass
class Mesh:
    """Triangle mesh with boundary/interface tags and pore labels.

    vertices: (nv, 2) float; triangles: (nt, 3) int, counterclockwise;
    edge_tags maps sorted vertex pairs to tag strings; element_subdomain
    holds one pore label per triangle; h is the characteristic edge length.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edge_tags: dict
    element_subdomain: np.ndarray
    h: float

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_subdomains(self) -> int:
        return int(self.element_subdomain.max()) + 1 if len(self.element_subdomain) else 0

    def interface_ids(self):
        ids = set()
        for tag in self.edge_tags.values():
            alpha = parse_interface_tag(tag)
            if alpha is not None:
                ids.add(alpha)
        return sorted(ids)


@dataclass
class Face:
    """A contiguous run of tagged edges on one subdomain's boundary.

    kind is "interface", "inlet", or "outlet"; alpha is the interface id
    (None for boundary faces).  edges are oriented local vertex pairs whose
    left-to-right direction has the outward normal on its right-hand side,
    i.e. outward = (dy, -dx)/len for edge vector (dx, dy).
    """

    kind: str
    alpha: int
    edges: list
    normals: np.ndarray
    lengths: np.ndarray

    @property
    def length(self) -> float:
        return float(self.lengths.sum())


@dataclass
class SubdomainMesh:
    """One pore body's mesh with its faces, linked to the parent mesh."""

    pore_id: int
    mesh: Mesh
    l2g: np.ndarray  # local vertex -> parent vertex
    faces: list
    n_unknown: int

    @property
    def unknown_faces(self):
        return self.faces[: self.n_unknown]

    @property
    def known_faces(self):
        return self.faces[self.n_unknown:]


# ---------------------------------------------------------------------------
# shared helpers


def triangle_areas(vertices, triangles):
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


def edge_triangle_map(triangles):
    """Map sorted vertex pair -> list of incident triangle indices."""
    out = {}
    for t, tri in enumerate(triangles):
        for k in range(3):
            key = _edge_key(int(tri[k]), int(tri[(k + 1) % 3]))
            out.setdefault(key, []).append(t)
    return out


def _grid_index(value, origin, h, what):
    k = (value - origin) / h
    r = round(k)
    if abs(k - r) > 1e-6:
        raise MeshError(f"{what} at {value} is not alignable at pitch {h}")
    return int(r)


# ---------------------------------------------------------------------------
# structured mesh construction


def build_structured_mesh(spec: GeometrySpec, segments, h: float) -> Mesh:
    """Uniform-grid mesh of a rectangle-packing void with axis-aligned
    interfaces resolved exactly by grid edges.

    Raises MeshError when a solid or segment is not alignable at pitch h,
    when a gap is narrower than 2h, or on an isolated void region.
    """
    for seg in segments:
        if seg.kind != "internal":
            continue
        dx = abs(seg.b[0] - seg.a[0])
        dy = abs(seg.b[1] - seg.a[1])
        if min(dx, dy) > 1e-9 * max(spec.scale, 1.0):
            raise MeshError(f"interface segment {seg.id} is not axis-aligned")
    return _build_grid_mesh(spec, segments, h, allow_oblique=False)


def build_fitted_mesh(spec: GeometrySpec, segments, h: float) -> Mesh:
    """Like build_structured_mesh but accepts oblique straight interface
    segments, resolving them by vertex snapping onto the segment line."""
    return _build_grid_mesh(spec, segments, h, allow_oblique=True)


def _build_grid_mesh(spec, segments, h, allow_oblique):
    x0, y0, x1, y1 = spec.domain
    if not (h > 0):
        raise MeshError(f"mesh pitch must be positive, got {h!r}")
    nx = _grid_index(x1, x0, h, "domain extent")
    ny = _grid_index(y1, y0, h, "domain extent")
    if nx < 1 or ny < 1:
        raise MeshError("domain smaller than one grid cell")

    solid_cells = np.zeros((nx, ny), dtype=bool)
    for s in spec.solids:
        if s.kind != "rect":
            raise MeshError("grid meshing supports rectangular solids only")
        sx, sy, sw, sh = s.params
        i0 = max(_grid_index(max(sx, x0), x0, h, "solid face"), 0)
        i1 = min(_grid_index(min(sx + sw, x1), x0, h, "solid face"), nx)
        j0 = max(_grid_index(max(sy, y0), y0, h, "solid face"), 0)
        j1 = min(_grid_index(min(sy + sh, y1), y0, h, "solid face"), ny)
        solid_cells[i0:i1, j0:j1] = True

    if allow_oblique:
        segments = [
            extend_segment_to_boundaries(spec, s) if s.kind == "internal" else s
            for s in segments
        ]
    internal = [s for s in segments if s.kind == "internal"]
    for seg in internal:
        if seg.length < 2.0 * h - _ALIGN_TOL:
            raise MeshError(
                f"gap of interface {seg.id} ({seg.length:.6g}) is narrower than 2h = {2*h:.6g}"
            )

    # vertex positions, mutable so oblique segments can snap vertices
    xs = x0 + h * np.arange(nx + 1)
    ys = y0 + h * np.arange(ny + 1)
    pos_x = np.repeat(xs, ny + 1).reshape(nx + 1, ny + 1)
    pos_y = np.tile(ys, nx + 1).reshape(nx + 1, ny + 1)

    diag = {}        # (i, j) -> "NE" or "NW"
    chain_edges = {}  # alpha -> list of ((i, j), (i, j)) grid-vertex pairs
    moved = {}

    for seg in internal:
        dx = seg.b[0] - seg.a[0]
        dy = seg.b[1] - seg.a[1]
        if abs(dx) <= 1e-9 * max(spec.scale, 1.0) or abs(dy) <= 1e-9 * max(spec.scale, 1.0):
            chain_edges[seg.id] = _axis_aligned_chain(seg, x0, y0, h, nx, ny)
            continue
        if not allow_oblique:
            raise MeshError(f"interface segment {seg.id} is not axis-aligned")
        chain_edges[seg.id] = _snap_oblique_segment(
            seg, spec, x0, y0, h, nx, ny, solid_cells, pos_x, pos_y, diag, moved
        )

    # triangles per void cell, honouring diagonal overrides
    vid = -np.ones((nx + 1, ny + 1), dtype=np.int64)
    tris = []
    cell_of = []
    for i in range(nx):
        for j in range(ny):
            if solid_cells[i, j]:
                continue
            for ii, jj in ((i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)):
                if vid[ii, jj] < 0:
                    vid[ii, jj] = 0  # mark used
            d = diag.get((i, j), "NE")
            v00, v10, v11, v01 = (i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)
            if d == "NE":
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
            else:
                tris.append((v00, v10, v01))
                tris.append((v10, v11, v01))
            cell_of += [(i, j), (i, j)]
    if not tris:
        raise MeshError("no void cells at this pitch")

    used = np.argwhere(vid >= 0)
    for n, (i, j) in enumerate(used):
        vid[i, j] = n
    vertices = np.empty((len(used), 2))
    vertices[:, 0] = pos_x[used[:, 0], used[:, 1]]
    vertices[:, 1] = pos_y[used[:, 0], used[:, 1]]
    triangles = np.array(
        [[vid[a], vid[b], vid[c]] for a, b, c in tris], dtype=np.int64
    )

    edge_tags = {}
    for alpha, chain in chain_edges.items():
        for (ga, gb) in chain:
            a, b = int(vid[ga]), int(vid[gb])
            if a < 0 or b < 0:
                raise MeshError(f"interface {alpha} runs through a solid region")
            edge_tags[_edge_key(a, b)] = interface_tag(alpha)

    e2t = edge_triangle_map(triangles)
    for key, ts in e2t.items():
        if len(ts) > 2:
            raise MeshError("non-manifold edge in grid mesh")
        if len(ts) == 2:
            continue
        if key in edge_tags:
            raise MeshError(f"interface edge {key} lies on the mesh boundary")
        mx = 0.5 * (vertices[key[0], 0] + vertices[key[1], 0])
        tol = _ALIGN_TOL * max(1.0, spec.scale)
        if abs(mx - x0) <= tol:
            edge_tags[key] = TAG_INLET
        elif abs(mx - x1) <= tol:
            edge_tags[key] = TAG_OUTLET
        else:
            edge_tags[key] = TAG_WALL

    mesh = Mesh(
        vertices=vertices,
        triangles=triangles,
        edge_tags=edge_tags,
        element_subdomain=np.zeros(len(triangles), dtype=np.int64),
        h=float(h),
    )
    mesh.element_subdomain = _flood_fill_labels(mesh)
    validate_mesh(mesh, segments=segments, spec=spec)
    return mesh


def _axis_aligned_chain(seg, x0, y0, h, nx, ny):
    ax, ay = seg.a
    bx, by = seg.b
    if abs(bx - ax) <= abs(by - ay):  # vertical
        i = _grid_index(ax, x0, h, f"interface {seg.id} x-position")
        j0 = _grid_index(min(ay, by), y0, h, f"interface {seg.id} endpoint")
        j1 = _grid_index(max(ay, by), y0, h, f"interface {seg.id} endpoint")
        if not (0 <= i <= nx and 0 <= j0 < j1 <= ny):
            raise MeshError(f"interface {seg.id} leaves the domain grid")
        return [((i, j), (i, j + 1)) for j in range(j0, j1)]
    j = _grid_index(ay, y0, h, f"interface {seg.id} y-position")
    i0 = _grid_index(min(ax, bx), x0, h, f"interface {seg.id} endpoint")
    i1 = _grid_index(max(ax, bx), x0, h, f"interface {seg.id} endpoint")
    if not (0 <= j <= ny and 0 <= i0 < i1 <= nx):
        raise MeshError(f"interface {seg.id} leaves the domain grid")
    return [((i, j), (i + 1, j)) for i in range(i0, i1)]


def _snap_oblique_segment(seg, spec, x0, y0, h, nx, ny, solid_cells, pos_x, pos_y, diag, moved):
    """March an oblique segment across grid lines of its dominant axis,
    snapping the nearest vertex of each crossed line onto the segment.

    Transposed coordinates are used so the march is always row-by-row.
    """
    ax, ay = seg.a
    bx, by = seg.b
    row_march = abs(by - ay) >= abs(bx - ax)
    if row_march:
        (p0, q0), (p1, q1) = (ax, ay), (bx, by)  # q is the marching axis
        oq, op, nq, npp = y0, x0, ny, nx
    else:
        (p0, q0), (p1, q1) = (ay, ax), (by, bx)
        oq, op, nq, npp = x0, y0, nx, ny
    if q1 < q0:
        p0, q0, p1, q1 = p1, q1, p0, q0

    k0 = _grid_index(q0, oq, h, f"interface {seg.id} endpoint")
    k1 = _grid_index(q1, oq, h, f"interface {seg.id} endpoint")
    if k1 - k0 < 2:
        raise MeshError(f"interface {seg.id} spans fewer than two grid rows")
    if not (0 <= k0 and k1 <= nq):
        raise MeshError(f"interface {seg.id} leaves the domain grid")

    slope = (p1 - p0) / (q1 - q0)
    cols = []
    for k in range(k0, k1 + 1):
        xi = p0 + slope * (oq + k * h - q0)
        c = int(round((xi - op) / h))
        c = min(max(c, 0), npp)
        cols.append((k, c, xi))

    chain = []
    for idx in range(len(cols)):
        k, c, xi = cols[idx]
        gi, gj = (c, k) if row_march else (k, c)
        target = (xi, oq + k * h) if row_march else (oq + k * h, xi)
        _snap_vertex(seg, spec, gi, gj, target, row_march, nx, ny, solid_cells,
                     pos_x, pos_y, moved)
        if idx == 0:
            continue
        kp, cp, _ = cols[idx - 1]
        dc = c - cp
        if abs(dc) > 1:
            raise MeshError(
                f"interface {seg.id} is too oblique for pitch {h} (column jump {dc})"
            )
        prev = (cp, kp) if row_march else (kp, cp)
        cur = (c, k) if row_march else (k, c)
        chain.append((prev, cur))
        if dc != 0:
            cell = _diagonal_cell(prev, cur, row_march)
            want = _diagonal_kind(prev, cur)
            have = diag.get(cell)
            if have is not None and have != want:
                raise MeshError(f"conflicting diagonal requirements in cell {cell}")
            diag[cell] = want
            ci, cj = cell
            if not (0 <= ci < nx and 0 <= cj < ny) or solid_cells[ci, cj]:
                raise MeshError(f"interface {seg.id} crosses a solid cell")
    return chain


def _snap_vertex(seg, spec, gi, gj, target, row_march, nx, ny, solid_cells, pos_x, pos_y, moved):
    if not (0 <= gi <= nx and 0 <= gj <= ny):
        raise MeshError(f"interface {seg.id} leaves the domain grid")
    prev = moved.get((gi, gj))
    if prev is not None:
        if abs(prev[0] - target[0]) > 1e-9 or abs(prev[1] - target[1]) > 1e-9:
            raise MeshError(
                f"interface {seg.id} snapping conflict at grid vertex {(gi, gj)}"
            )
        return
    neighbors = [
        (gi - 1, gj - 1), (gi, gj - 1), (gi - 1, gj), (gi, gj),
    ]
    solid_n = {
        (ci, cj)
        for ci, cj in neighbors
        if 0 <= ci < nx and 0 <= cj < ny and solid_cells[ci, cj]
    }
    if solid_n:
        # moving along a solid face is allowed only when the solid cells form
        # a full band on one side of the sliding direction
        def in_range(cells):
            return {(ci, cj) for ci, cj in cells if 0 <= ci < nx and 0 <= cj < ny}

        if row_march:
            band_lo = in_range({(gi - 1, gj - 1), (gi, gj - 1)})
            band_hi = in_range({(gi - 1, gj), (gi, gj)})
        else:
            band_lo = in_range({(gi - 1, gj - 1), (gi - 1, gj)})
            band_hi = in_range({(gi, gj - 1), (gi, gj)})
        if solid_n != band_lo and solid_n != band_hi:
            raise MeshError(
                f"interface {seg.id} endpoint slides across a solid corner at {(gi, gj)}"
            )
    # sliding along domain left/right (row march) or bottom/top edges is fine;
    # movement happens along that boundary line only
    if row_march and gi in (0, nx) and abs(target[0] - pos_x[gi, gj]) > 1e-12:
        raise MeshError(f"interface {seg.id} would deform the domain boundary")
    if not row_march and gj in (0, ny) and abs(target[1] - pos_y[gi, gj]) > 1e-12:
        raise MeshError(f"interface {seg.id} would deform the domain boundary")
    pos_x[gi, gj] = target[0]
    pos_y[gi, gj] = target[1]
    moved[(gi, gj)] = target


def _diagonal_cell(prev, cur, row_march):
    (i0, j0), (i1, j1) = prev, cur
    return (min(i0, i1), min(j0, j1))


def _diagonal_kind(prev, cur):
    (i0, j0), (i1, j1) = prev, cur
    # NE diagonal joins (i, j) and (i+1, j+1); NW joins (i+1, j) and (i, j+1)
    return "NE" if (i1 - i0) * (j1 - j0) > 0 else "NW"


def _flood_fill_labels(mesh: Mesh) -> np.ndarray:
    e2t = edge_triangle_map(mesh.triangles)
    nt = mesh.n_triangles
    adj = [[] for _ in range(nt)]
    for key, ts in e2t.items():
        if len(ts) != 2:
            continue
        tag = mesh.edge_tags.get(key)
        if tag is not None and parse_interface_tag(tag) is not None:
            continue
        adj[ts[0]].append(ts[1])
        adj[ts[1]].append(ts[0])
    labels = -np.ones(nt, dtype=np.int64)
    current = 0
    for start in range(nt):
        if labels[start] >= 0:
            continue
        stack = [start]
        labels[start] = current
        while stack:
            t = stack.pop()
            for nb in adj[t]:
                if labels[nb] < 0:
                    labels[nb] = current
                    stack.append(nb)
        current += 1
    return labels


# ---------------------------------------------------------------------------
# validation


def validate_mesh(mesh: Mesh, segments=None, spec: GeometrySpec = None):
    """Structural checks; raises MeshError on the first violation."""
    areas = triangle_areas(mesh.vertices, mesh.triangles)
    if not (areas > 0).all():
        raise MeshError("mesh contains non-positive triangle areas")
    if mesh.triangles.max(initial=-1) >= mesh.n_vertices:
        raise MeshError("triangle references missing vertex")
    if len(mesh.element_subdomain) != mesh.n_triangles:
        raise MeshError("element_subdomain length mismatch")

    e2t = edge_triangle_map(mesh.triangles)
    for key, ts in e2t.items():
        if len(ts) > 2:
            raise MeshError(f"edge {key} shared by {len(ts)} triangles")
        tag = mesh.edge_tags.get(key)
        alpha = parse_interface_tag(tag) if tag else None
        if len(ts) == 1:
            if tag is None:
                raise MeshError(f"untagged boundary edge {key}")
            if alpha is not None:
                raise MeshError(f"interface edge {key} lies on the mesh boundary")
        else:
            la, lb = mesh.element_subdomain[ts[0]], mesh.element_subdomain[ts[1]]
            if alpha is not None:
                if la == lb:
                    raise MeshError(f"interface edge {key} does not separate subdomains")
            elif tag is not None:
                raise MeshError(f"interior edge {key} carries boundary tag {tag}")
            elif la != lb:
                raise MeshError(f"subdomain labels change across untagged edge {key}")
    for key in mesh.edge_tags:
        if key not in e2t:
            raise MeshError(f"tagged edge {key} is not a mesh edge")

    # every subdomain must reach an open face or interface (no sealed cavities)
    open_subs = set()
    for key, tag in mesh.edge_tags.items():
        if tag == TAG_WALL:
            continue
        for t in e2t[key]:
            open_subs.add(int(mesh.element_subdomain[t]))
    all_subs = set(int(v) for v in np.unique(mesh.element_subdomain))
    if all_subs - open_subs:
        raise MeshError(f"disconnected void component detected: subdomains {sorted(all_subs - open_subs)}")

    if segments is not None:
        by_alpha = {}
        for key, tag in mesh.edge_tags.items():
            alpha = parse_interface_tag(tag)
            if alpha is not None:
                by_alpha.setdefault(alpha, []).append(key)
        for seg in segments:
            if seg.kind != "internal":
                continue
            edges = by_alpha.get(seg.id)
            if not edges:
                raise MeshError(f"interface {seg.id} has no tagged mesh edges")
            total = 0.0
            a = np.asarray(seg.a, float)
            d = np.asarray(seg.b, float) - a
            length = math.hypot(*d)
            d = d / length
            for (u, v) in edges:
                for w in (u, v):
                    rel = mesh.vertices[w] - a
                    off = abs(rel[0] * d[1] - rel[1] * d[0])
                    if off > 1e-7 * max(1.0, length):
                        raise MeshError(f"edge vertex {w} strays from interface {seg.id}")
                total += float(np.hypot(*(mesh.vertices[u] - mesh.vertices[v])))
            if abs(total - length) > 1e-7 * max(1.0, length):
                raise MeshError(
                    f"interface {seg.id} not exactly tiled: edges sum to {total}, segment is {length}"
                )

    if spec is not None and all(s.kind == "rect" for s in spec.solids):
        x0, y0, x1, y1 = spec.domain
        solid_area = 0.0
        for s in spec.solids:
            sx, sy, sw, sh = s.params
            w = max(0.0, min(sx + sw, x1) - max(sx, x0))
            hgt = max(0.0, min(sy + sh, y1) - max(sy, y0))
            solid_area += w * hgt
        expect = (x1 - x0) * (y1 - y0) - solid_area
        got = float(areas.sum())
        if abs(got - expect) > 1e-10 * max(expect, 1.0):
            raise MeshError(f"mesh area {got} does not match void area {expect}")


# ---------------------------------------------------------------------------
# mesh file IO (Triangle-style .node/.ele/.edge)


def write_mesh(mesh: Mesh, basepath, comment=None):
    """Write .node/.ele/.edge files (1-based indices, '#' comments)."""
    basepath = str(basepath)
    header = f"# {comment}\n" if comment else ""
    with open(basepath + ".node", "w") as fh:
        fh.write(header)
        fh.write(f"{mesh.n_vertices} 2 0 0\n")
        for k, (x, y) in enumerate(mesh.vertices, start=1):
            fh.write(f"{k} {x:.17g} {y:.17g}\n")
    with open(basepath + ".ele", "w") as fh:
        fh.write(header)
        fh.write(f"{mesh.n_triangles} 3 1\n")
        for k, (tri, sub) in enumerate(zip(mesh.triangles, mesh.element_subdomain), start=1):
            fh.write(f"{k} {tri[0]+1} {tri[1]+1} {tri[2]+1} {sub}\n")
    with open(basepath + ".edge", "w") as fh:
        fh.write(header)
        items = sorted(mesh.edge_tags.items())
        fh.write(f"{len(items)} 1\n")
        for k, ((a, b), tag) in enumerate(items, start=1):
            fh.write(f"{k} {a+1} {b+1} {tag}\n")


def _read_rows(path, what):
    try:
        with open(path) as fh:
            rows = []
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    rows.append(line.split())
            if not rows:
                raise MeshError(f"empty {what} file {path}")
            return rows
    except OSError as exc:
        raise MeshError(f"cannot read {what} file {path}: {exc}") from exc


def read_mesh(node_path, ele_path, edge_path) -> Mesh:
    """Read and validate a Triangle-style mesh.

    Triangles are re-oriented counterclockwise where needed; the subdomain
    column is required.  h is taken as the longest mesh edge.
    """
    rows = _read_rows(node_path, "node")
    try:
        nv = int(rows[0][0])
        vertices = np.empty((nv, 2))
        for row in rows[1:]:
            k = int(row[0]) - 1
            vertices[k] = (float(row[1]), float(row[2]))
        if len(rows) - 1 != nv:
            raise MeshError(f"node count mismatch in {node_path}")
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed node file {node_path}: {exc}") from exc

    rows = _read_rows(ele_path, "ele")
    try:
        nt = int(rows[0][0])
        triangles = np.empty((nt, 3), dtype=np.int64)
        subdomain = np.empty(nt, dtype=np.int64)
        for row in rows[1:]:
            if len(row) < 5:
                raise MeshError(f"element row lacks subdomain label in {ele_path}")
            k = int(row[0]) - 1
            triangles[k] = (int(row[1]) - 1, int(row[2]) - 1, int(row[3]) - 1)
            subdomain[k] = int(row[4])
        if len(rows) - 1 != nt:
            raise MeshError(f"element count mismatch in {ele_path}")
    except (ValueError, IndexError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"malformed ele file {ele_path}: {exc}") from exc

    areas = triangle_areas(vertices, triangles)
    flip = areas < 0
    if flip.any():
        triangles[flip] = triangles[flip][:, [0, 2, 1]]

    rows = _read_rows(edge_path, "edge")
    edge_tags = {}
    try:
        ne = int(rows[0][0])
        for row in rows[1:]:
            a, b = int(row[1]) - 1, int(row[2]) - 1
            edge_tags[_edge_key(a, b)] = row[3]
        if len(rows) - 1 != ne:
            raise MeshError(f"edge count mismatch in {edge_path}")
    except (ValueError, IndexError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"malformed edge file {edge_path}: {exc}") from exc

    edge_len = _max_edge_length(vertices, triangles)
    mesh = Mesh(
        vertices=vertices,
        triangles=triangles,
        edge_tags=edge_tags,
        element_subdomain=subdomain,
        h=edge_len,
    )
    validate_mesh(mesh)
    return mesh


def _max_edge_length(vertices, triangles):
    best = 0.0
    for tri in triangles:
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            best = max(best, float(np.hypot(*(vertices[a] - vertices[b]))))
    return best


# ---------------------------------------------------------------------------
# refinement


def refine(mesh: Mesh) -> Mesh:
    """Uniform red refinement: every triangle splits into four via edge
    midpoints; tags and subdomain labels are inherited; h halves."""
    vertices = [tuple(v) for v in mesh.vertices]
    midpoint = {}

    def mid(a, b):
        key = _edge_key(a, b)
        idx = midpoint.get(key)
        if idx is None:
            p = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
            idx = len(vertices)
            vertices.append((float(p[0]), float(p[1])))
            midpoint[key] = idx
        return idx

    triangles = []
    subdomain = []
    for tri, sub in zip(mesh.triangles, mesh.element_subdomain):
        a, b, c = (int(v) for v in tri)
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        triangles += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        subdomain += [sub] * 4

    edge_tags = {}
    for (a, b), tag in mesh.edge_tags.items():
        m = midpoint.get(_edge_key(a, b))
        if m is None:
            raise MeshError(f"tagged edge {(a, b)} missing from refinement")
        edge_tags[_edge_key(a, m)] = tag
        edge_tags[_edge_key(m, b)] = tag

    out = Mesh(
        vertices=np.array(vertices, dtype=float),
        triangles=np.array(triangles, dtype=np.int64),
        edge_tags=edge_tags,
        element_subdomain=np.array(subdomain, dtype=np.int64),
        h=mesh.h / 2.0,
    )
    validate_mesh(out)
    return out


# ---------------------------------------------------------------------------
# subdomain extraction


def extract_subdomains(mesh: Mesh):
    """Split the mesh into per-pore meshes with ordered boundary faces.

    Faces are ordered unknown-first: internal interfaces sorted by id, then
    inlet runs, then outlet runs (each sorted by position).  Outward normals
    follow each owning triangle's orientation.
    """
    e2t = edge_triangle_map(mesh.triangles)
    subs = []
    labels = np.unique(mesh.element_subdomain)
    for label in labels:
        tsel = np.where(mesh.element_subdomain == label)[0]
        tris = mesh.triangles[tsel]
        l2g = np.unique(tris)
        g2l = {int(g): k for k, g in enumerate(l2g)}
        local_tris = np.array([[g2l[int(v)] for v in tri] for tri in tris], dtype=np.int64)
        local_vertices = mesh.vertices[l2g]

        # oriented local boundary edges: edges of exactly one local triangle
        local_e2t = edge_triangle_map(local_tris)
        oriented = {}
        for tloc, tri in enumerate(local_tris):
            for k in range(3):
                a, b = int(tri[k]), int(tri[(k + 1) % 3])
                if len(local_e2t[_edge_key(a, b)]) == 1:
                    oriented[_edge_key(a, b)] = (a, b)

        local_tags = {}
        for key, (a, b) in oriented.items():
            gkey = _edge_key(int(l2g[a]), int(l2g[b]))
            tag = mesh.edge_tags.get(gkey)
            if tag is None:
                raise MeshError(f"subdomain {label} has an untagged boundary edge {gkey}")
            local_tags[key] = tag

        faces = []
        by_alpha = {}
        runs = {TAG_INLET: [], TAG_OUTLET: []}
        for key, tag in local_tags.items():
            alpha = parse_interface_tag(tag)
            if alpha is not None:
                by_alpha.setdefault(alpha, []).append(oriented[key])
            elif tag in runs:
                runs[tag].append(oriented[key])
        for alpha in sorted(by_alpha):
            faces.append(_make_face("interface", alpha, by_alpha[alpha], local_vertices))
        n_unknown = len(faces)
        for tag, kind in ((TAG_INLET, "inlet"), (TAG_OUTLET, "outlet")):
            for run in _connected_runs(runs[tag], local_vertices):
                faces.append(_make_face(kind, None, run, local_vertices))

        sub_mesh = Mesh(
            vertices=local_vertices,
            triangles=local_tris,
            edge_tags=local_tags,
            element_subdomain=np.full(len(local_tris), label, dtype=np.int64),
            h=mesh.h,
        )
        subs.append(
            SubdomainMesh(
                pore_id=int(label),
                mesh=sub_mesh,
                l2g=l2g,
                faces=faces,
                n_unknown=n_unknown,
            )
        )
    return subs


def _connected_runs(edges, vertices):
    """Group edges into connected components by shared vertices, ordered by
    each run's lowest (y, x) corner for determinism."""
    if not edges:
        return []
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        parent.setdefault(a, a)
        parent.setdefault(b, b)
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    groups = {}
    for e in edges:
        groups.setdefault(find(e[0]), []).append(e)

    def corner(group):
        pts = vertices[sorted({v for e in group for v in e})]
        return (float(pts[:, 1].min()), float(pts[:, 0].min()))

    return [sorted(g) for g in sorted(groups.values(), key=corner)]


def _make_face(kind, alpha, edges, vertices):
    edges = sorted(edges)
    normals = np.empty((len(edges), 2))
    lengths = np.empty(len(edges))
    for k, (a, b) in enumerate(edges):
        d = vertices[b] - vertices[a]
        length = math.hypot(*d)
        if length == 0:
            raise MeshError("zero-length boundary edge")
        normals[k] = (d[1] / length, -d[0] / length)
        lengths[k] = length
    return Face(kind=kind, alpha=alpha, edges=edges, normals=normals, lengths=lengths)


def interface_adjacency(mesh: Mesh):
    """Map interface id -> (lo, hi) subdomain labels flanking it."""
    e2t = edge_triangle_map(mesh.triangles)
    out = {}
    for key, tag in mesh.edge_tags.items():
        alpha = parse_interface_tag(tag)
        if alpha is None:
            continue
        ts = e2t[key]
        if len(ts) != 2:
            raise MeshError(f"interface edge {key} not shared by two triangles")
        la = int(mesh.element_subdomain[ts[0]])
        lb = int(mesh.element_subdomain[ts[1]])
        pair = (min(la, lb), max(la, lb))
        prev = out.get(alpha)
        if prev is None:
            out[alpha] = pair
        elif prev != pair:
            raise MeshError(f"interface {alpha} touches more than two subdomains")
    return out
