"""Regenerate the shipped disk-packing fixture.

Writes fixtures/model-problem.json (the geometry) and the body-fitted
triangulation fixtures/model-problem.{node,ele,edge} with per-triangle
subdomain labels, one subdomain per pore body.

The packing is a 3x3 grid of disks with mixed radii inside a rectangular
box.  The four interior cell junctions of a perfect grid are cocircular
quads and collapse to a single pore site each; nudging one corner disk
splits exactly one of them into two ordinary triple junctions, which sets
the pore count to 17.  Pore counting depends only on the disk centers, so
the radii are free to vary.

Usage: python scripts/make_fixtures.py [--h H] [--check]
"""

import argparse
import math
import sys
from collections import Counter
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from porestokes.geometry import (
    GeometrySpec,
    Solid,
    extract_topology,
    place_interfaces,
    save_geometry,
)
from porestokes.meshkit import (
    TAG_INLET,
    TAG_OUTLET,
    TAG_WALL,
    Mesh,
    MeshError,
    _flood_fill_labels,
    edge_triangle_map,
    interface_tag,
    validate_mesh,
    write_mesh,
)

PITCH_X, PITCH_Y = 2.6, 2.4
MARGIN_X, MARGIN_Y = 1.5, 1.3
RADII = [
    [0.82, 0.74, 0.80],
    [0.70, 0.88, 0.76],
    [0.84, 0.72, 0.78],
]
CORNER_NUDGE = (-0.16, -0.13)
MESH_H = 0.2


def model_spec() -> GeometrySpec:
    disks = []
    for i in range(3):
        for j in range(3):
            cx, cy = MARGIN_X + i * PITCH_X, MARGIN_Y + j * PITCH_Y
            if (i, j) == (2, 2):
                cx += CORNER_NUDGE[0]
                cy += CORNER_NUDGE[1]
            disks.append((cx, cy, RADII[j][i]))
    return GeometrySpec(
        domain=(0.0, 0.0, 2 * MARGIN_X + 2 * PITCH_X, 2 * MARGIN_Y + 2 * PITCH_Y),
        solids=tuple(Solid("disk", d) for d in disks),
        p_in=1.0,
        p_out=0.0,
        nu=1.0,
        seed=0,
    )


class _PointBank:
    """Deduplicating point store; chains reference points by index."""

    def __init__(self):
        self.pts = []
        self.index = {}

    def add(self, x, y):
        key = (round(float(x), 9), round(float(y), 9))
        k = self.index.get(key)
        if k is None:
            k = len(self.pts)
            self.index[key] = k
            self.pts.append((float(x), float(y)))
        return k


def _subdivide(a, b, h, bank):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    n = max(1, int(math.ceil(math.hypot(*(b - a)) / h)))
    return [bank.add(*(a + (b - a) * (k / n))) for k in range(n + 1)]


def _point_in_polygon(poly, p):
    # ray crossing along +x; boundary points do not occur here because the
    # queried points are triangle centroids strictly off the chains
    x, y = p
    inside = False
    n = len(poly)
    for i in range(n):
        xa, ya = poly[i]
        xb, yb = poly[(i + 1) % n]
        if (ya > y) != (yb > y):
            xc = xa + (y - ya) * (xb - xa) / (yb - ya)
            if xc > x:
                inside = not inside
    return inside


def build_fitted_disk_mesh(spec, segments, h):
    """Triangulate the void of a disk packing, edges fitted to the solids,
    the box, and the interface chords.

    Constrained edges are recovered by midpoint insertion into a plain
    Delaunay triangulation; disks are entered as polygons with vertices at
    the exact interface endpoints so chords meet the solid boundary at mesh
    nodes.  Deterministic for fixed inputs.
    """
    x0, y0, x1, y1 = spec.domain
    bank = _PointBank()
    chains = []

    internal = [s for s in segments if s.kind == "internal"]

    disk_extra = {k: [] for k in range(len(spec.solids))}
    box_extra = {"L": [], "R": [], "B": [], "T": []}

    def classify(p):
        px, py = p
        for k, s in enumerate(spec.solids):
            cx, cy, r = s.params
            if abs(math.hypot(px - cx, py - cy) - r) < 1e-7:
                return ("disk", k)
        if abs(px - x0) < 1e-9:
            return ("box", "L")
        if abs(px - x1) < 1e-9:
            return ("box", "R")
        if abs(py - y0) < 1e-9:
            return ("box", "B")
        if abs(py - y1) < 1e-9:
            return ("box", "T")
        raise MeshError(f"interface endpoint {p} is on no boundary")

    for seg in internal:
        for p in (seg.a, seg.b):
            kind, ref = classify(p)
            if kind == "disk":
                disk_extra[ref].append(p)
            else:
                box_extra[ref].append(p)

    # disk polygons with vertices at the exact interface endpoint angles
    polys = []
    for k, s in enumerate(spec.solids):
        cx, cy, r = s.params
        n = max(24, int(math.ceil(2 * math.pi * r / h)))
        ang_extra = [math.atan2(p[1] - cy, p[0] - cx) for p in disk_extra[k]]
        step = 2 * math.pi / n
        angs = []
        for j in range(n):
            a = -math.pi + (j + 0.5) * step
            if all(min(abs(a - e), 2 * math.pi - abs(a - e)) > 0.3 * step
                   for e in ang_extra):
                angs.append(("reg", a))
        for e, p in zip(ang_extra, disk_extra[k]):
            angs.append(("exact", e, p))
        angs.sort(key=lambda t: t[1])
        ids = []
        for t in angs:
            if t[0] == "reg":
                ids.append(bank.add(cx + r * math.cos(t[1]), cy + r * math.sin(t[1])))
            else:
                ids.append(bank.add(*t[2]))
        chains.append((ids + [ids[0]], TAG_WALL))
        polys.append([bank.pts[i] for i in ids])

    def box_chain(start, end, axis, fixed, tag, extras):
        vals = sorted(set([start, end] + [p[axis] for p in extras]))
        ids = []
        for a, b in zip(vals[:-1], vals[1:]):
            pa = (a, fixed) if axis == 0 else (fixed, a)
            pb = (b, fixed) if axis == 0 else (fixed, b)
            sub = _subdivide(pa, pb, h, bank)
            ids.extend(sub if not ids else sub[1:])
        chains.append((ids, tag))

    box_chain(y0, y1, 1, x0, TAG_INLET, box_extra["L"])
    box_chain(y0, y1, 1, x1, TAG_OUTLET, box_extra["R"])
    box_chain(x0, x1, 0, y0, TAG_WALL, box_extra["B"])
    box_chain(x0, x1, 0, y1, TAG_WALL, box_extra["T"])

    for seg in internal:
        ids = [bank.add(*seg.a)]
        ids.extend(_subdivide(seg.a, seg.b, h, bank)[1:])
        ids[-1] = bank.add(*seg.b)
        chains.append((ids, interface_tag(seg.id)))

    csegs = []
    for ids, _ in chains:
        for a, b in zip(ids[:-1], ids[1:]):
            csegs.append((np.array(bank.pts[a]), np.array(bank.pts[b])))

    def seg_dist(p, a, b):
        ab = b - a
        t = np.clip(((p - a) @ ab) / max(ab @ ab, 1e-300), 0, 1)
        return np.hypot(*(a + t * ab - p))

    # hex scatter kept clear of every constraint chain
    scatter = []
    dy = h * math.sqrt(3) / 2
    ny = int((y1 - y0) / dy) + 1
    for j in range(ny + 1):
        yy = y0 + j * dy
        off = (h / 2) if j % 2 else 0.0
        nx = int((x1 - x0) / h) + 1
        for i in range(nx + 1):
            xx = x0 + off + i * h
            if not (x0 + 0.45 * h < xx < x1 - 0.45 * h
                    and y0 + 0.45 * h < yy < y1 - 0.45 * h):
                continue
            ok = True
            for s in spec.solids:
                cx, cy, r = s.params
                if math.hypot(xx - cx, yy - cy) < r + 0.5 * h:
                    ok = False
                    break
            if not ok:
                continue
            p = np.array([xx, yy])
            if min(seg_dist(p, a, b) for a, b in csegs) < 0.6 * h:
                continue
            scatter.append((xx, yy))

    pts = np.array(bank.pts + scatter)

    required = set()
    tag_of = {}
    for ids, tag in chains:
        for a, b in zip(ids[:-1], ids[1:]):
            key = (min(a, b), max(a, b))
            required.add(key)
            tag_of[key] = tag

    tri = None
    for _ in range(16):
        tri = Delaunay(pts)
        edges = set()
        for simplex in tri.simplices:
            for k in range(3):
                a, b = int(simplex[k]), int(simplex[(k + 1) % 3])
                edges.add((min(a, b), max(a, b)))
        missing = [e for e in required if e not in edges]
        if not missing:
            break
        new_pts = list(pts)
        for (a, b) in missing:
            mid = 0.5 * (pts[a] + pts[b])
            m = len(new_pts)
            new_pts.append(mid)
            required.discard((a, b))
            required.add((min(a, m), max(a, m)))
            required.add((min(b, m), max(b, m)))
            t = tag_of.pop((a, b))
            tag_of[(min(a, m), max(a, m))] = t
            tag_of[(min(b, m), max(b, m))] = t
        pts = np.array(new_pts)
    else:
        raise MeshError("constrained edges could not be recovered")

    keep = []
    for t, simplex in enumerate(tri.simplices):
        c = pts[simplex].mean(axis=0)
        if any(_point_in_polygon(poly, c) for poly in polys):
            continue
        keep.append(t)
    tris = tri.simplices[keep]

    used = np.unique(tris)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = pts[used]
    tris = remap[tris]

    a = verts[tris[:, 0]]
    b = verts[tris[:, 1]]
    c = verts[tris[:, 2]]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) \
        - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flip = det < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    edge_tags = {}
    for (ea, eb), tag in tag_of.items():
        ra, rb = int(remap[ea]), int(remap[eb])
        if ra >= 0 and rb >= 0:
            edge_tags[(min(ra, rb), max(ra, rb))] = tag

    h_max = max(
        float(np.hypot(*(verts[ea] - verts[eb])))
        for ea, eb in edge_triangle_map(tris)
    )
    return Mesh(
        vertices=verts,
        triangles=tris,
        edge_tags=edge_tags,
        element_subdomain=np.zeros(len(tris), dtype=np.int64),
        h=h_max,
    )


def label_subdomains(mesh, topology, domain):
    """Set element_subdomain so region k is the pore-body of pore k.

    Flood fill across untagged edges partitions the void; each pore site
    locates its containing triangle and the mapping must come out one to
    one or the chords failed to isolate the pore bodies.
    """
    x0, y0, x1, y1 = domain
    labels = _flood_fill_labels(mesh)
    nreg = int(labels.max()) + 1
    if nreg != len(topology.pores):
        raise MeshError(
            f"flood fill found {nreg} regions for {len(topology.pores)} pores"
        )
    va = mesh.vertices[mesh.triangles[:, 0]]
    vb = mesh.vertices[mesh.triangles[:, 1]]
    vc = mesh.vertices[mesh.triangles[:, 2]]
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)

    def locate(p):
        d0 = (vb[:, 0] - va[:, 0]) * (p[1] - va[:, 1]) \
            - (vb[:, 1] - va[:, 1]) * (p[0] - va[:, 0])
        d1 = (vc[:, 0] - vb[:, 0]) * (p[1] - vb[:, 1]) \
            - (vc[:, 1] - vb[:, 1]) * (p[0] - vb[:, 0])
        d2 = (va[:, 0] - vc[:, 0]) * (p[1] - vc[:, 1]) \
            - (va[:, 1] - vc[:, 1]) * (p[0] - vc[:, 0])
        inside = (d0 >= -1e-12) & (d1 >= -1e-12) & (d2 >= -1e-12)
        cand = np.where(inside)[0]
        if len(cand):
            return int(cand[0])
        return int(np.argmin(np.hypot(centroids[:, 0] - p[0],
                                      centroids[:, 1] - p[1])))

    region_of = {}
    for pid, pore in enumerate(topology.pores):
        p = np.array(pore.position)
        # wall-pore sites sit on the boundary; pull them just inside
        p[0] = min(max(p[0], x0 + 0.02), x1 - 0.02)
        p[1] = min(max(p[1], y0 + 0.02), y1 - 0.02)
        region_of[pid] = int(labels[locate(p)])
    counts = Counter(region_of.values())
    if len(counts) != nreg or any(c != 1 for c in counts.values()):
        raise MeshError(f"pore-to-region mapping is not one to one: {counts}")
    sub = -np.ones(mesh.n_triangles, dtype=np.int64)
    for pid, r in region_of.items():
        sub[labels == r] = pid
    mesh.element_subdomain = sub
    return mesh


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, default=MESH_H, help="target edge length")
    ap.add_argument("--check", action="store_true",
                    help="also solve the fixture both ways and print the error")
    ap.add_argument("--outdir", default=str(REPO / "fixtures"))
    args = ap.parse_args(argv)

    spec = model_spec()
    topo = extract_topology(spec)
    if len(topo.pores) != 17:
        raise SystemExit(f"expected 17 pores, extraction found {len(topo.pores)}")
    segs = place_interfaces(spec, topo)
    mesh = build_fitted_disk_mesh(spec, segs, args.h)
    mesh = label_subdomains(mesh, topo, spec.domain)
    validate_mesh(mesh, segs)

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_geometry(spec, outdir / "model-problem.json")
    comment = "disk-packing fixture, regenerate with scripts/make_fixtures.py"
    write_mesh(mesh, outdir / "model-problem", comment=comment)
    print(f"wrote {outdir}/model-problem.json and .node/.ele/.edge "
          f"({mesh.n_vertices} vertices, {mesh.n_triangles} triangles, "
          f"{len(topo.pores)} subdomains)")

    if args.check:
        from porestokes.ddpnm import run_ddpnm
        from porestokes.stokesfem import boundary_flux, error_norms, solve_global

        ref, _ = solve_global(mesh, nu=spec.nu, p_in=spec.p_in, p_out=spec.p_out)
        result = run_ddpnm(mesh, nu=spec.nu, p_in=spec.p_in, p_out=spec.p_out)
        space, U, P = result.stitched()
        errs = error_norms(space, U, P, ref.U, ref.P)
        print(f"reference flux {boundary_flux(ref, 'outlet'):.6f}, "
              f"network flux {result.flux_out:.6f}, "
              f"relative combined error {errs['rel']:.3e}")


if __name__ == "__main__":
    main()
