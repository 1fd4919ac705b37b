"""Porous-geometry primitives: solid packings, interface placement, network topology.

A geometry is an axis-aligned rectangular channel with impermeable solid
inclusions (disks or rectangles).  Flow enters through the left edge and
leaves through the right edge; the top and bottom edges and all solid
surfaces are no-slip walls.  The void space decomposes into pore bodies
joined by throats; each throat carries a straight interface segment placed
at the narrowest constriction between its two flanking obstacles.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.random import Generator, Philox
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay

log = logging.getLogger(__name__)

# Wall identifiers used for throat flanks when the constriction is formed
# against a domain wall rather than a second solid.
WALL_SIDES = ("left", "right", "bottom", "top")

_GOLDEN_TOL = 1e-10  # position tolerance of the saddle search
_CLEARANCE = 1e-8    # re-projection clearance for perturbed endpoints


class GeometryError(ValueError):
    """Invalid geometry input or a geometric operation that cannot proceed."""


@dataclass(frozen=True)
class Solid:
    """One impermeable inclusion; ``kind`` is "disk" or "rect".

    Disk params are (cx, cy, r); rect params are (x, y, w, h) with (x, y)
    the lower-left corner.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind == "disk":
            cx, cy, r = self.params
            if not (r > 0):
                raise GeometryError(f"disk radius must be positive, got {r!r}")
        elif self.kind == "rect":
            x, y, w, h = self.params
            if not (w > 0 and h > 0):
                raise GeometryError(f"rect extents must be positive, got {(w, h)!r}")
        else:
            raise GeometryError(f"unknown solid kind {self.kind!r}")
        if not all(math.isfinite(v) for v in self.params):
            raise GeometryError(f"solid parameters must be finite, got {self.params!r}")

    @property
    def center(self) -> np.ndarray:
        if self.kind == "disk":
            return np.array(self.params[:2], dtype=float)
        x, y, w, h = self.params
        return np.array([x + w / 2.0, y + h / 2.0])

    def signed_distance(self, p) -> float:
        """Euclidean distance to the boundary, negative inside the solid."""
        p = np.asarray(p, dtype=float)
        if self.kind == "disk":
            cx, cy, r = self.params
            return math.hypot(p[0] - cx, p[1] - cy) - r
        x, y, w, h = self.params
        dx = max(x - p[0], p[0] - (x + w))
        dy = max(y - p[1], p[1] - (y + h))
        if dx > 0 or dy > 0:
            return math.hypot(max(dx, 0.0), max(dy, 0.0))
        return max(dx, dy)

    def distance(self, p) -> float:
        return max(self.signed_distance(p), 0.0)

    def contains(self, p) -> bool:
        return self.signed_distance(p) < 0.0

    def closest_point(self, p) -> np.ndarray:
        """Closest point on the solid boundary (defined also for p inside)."""
        p = np.asarray(p, dtype=float)
        if self.kind == "disk":
            cx, cy, r = self.params
            d = p - [cx, cy]
            n = math.hypot(*d)
            if n == 0.0:
                d, n = np.array([1.0, 0.0]), 1.0
            return np.array([cx, cy]) + d * (r / n)
        x, y, w, h = self.params
        if not self.contains(p):
            return np.array([min(max(p[0], x), x + w), min(max(p[1], y), y + h)])
        # inside: project to the nearest face
        gaps = [p[0] - x, (x + w) - p[0], p[1] - y, (y + h) - p[1]]
        k = int(np.argmin(gaps))
        q = p.copy()
        q[0] = x if k == 0 else (x + w if k == 1 else q[0])
        q[1] = y if k == 2 else (y + h if k == 3 else q[1])
        return q

    def outward_from(self, p) -> np.ndarray:
        """Unit direction pointing out of the solid at the point nearest to p."""
        q = self.closest_point(p)
        if self.kind == "disk":
            c = self.center
            d = q - c
            n = math.hypot(*d)
            return d / n if n > 0 else np.array([1.0, 0.0])
        x, y, w, h = self.params
        eps = 1e-12 * max(w, h)
        if abs(q[0] - x) < eps:
            return np.array([-1.0, 0.0])
        if abs(q[0] - (x + w)) < eps:
            return np.array([1.0, 0.0])
        if abs(q[1] - y) < eps:
            return np.array([0.0, -1.0])
        return np.array([0.0, 1.0])


@dataclass(frozen=True)
class GeometrySpec:
    """Channel domain, solid packing, and driving pressures.

    domain is (x0, y0, x1, y1).  Pressure p_in acts on the left edge and
    p_out on the right edge; nu is the kinematic viscosity (unit density,
    so it doubles as the dynamic viscosity).
    """

    domain: tuple
    solids: tuple
    p_in: float
    p_out: float
    nu: float
    seed: int = 0

    def __post_init__(self):
        x0, y0, x1, y1 = self.domain
        vals = [x0, y0, x1, y1, self.p_in, self.p_out, self.nu]
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError("domain and scalar parameters must be finite")
        if not (x1 > x0 and y1 > y0):
            raise GeometryError(f"degenerate domain {self.domain!r}")
        if not self.p_in > self.p_out:
            raise GeometryError(
                f"inlet pressure must exceed outlet pressure, got {self.p_in} <= {self.p_out}"
            )
        if not self.nu > 0:
            raise GeometryError(f"viscosity must be positive, got {self.nu!r}")
        object.__setattr__(self, "domain", tuple(float(v) for v in self.domain))
        object.__setattr__(self, "solids", tuple(self.solids))
        for s in self.solids:
            if not _intersects_domain(s, self.domain):
                raise GeometryError(f"solid {s} lies outside the domain")
        for i in range(len(self.solids)):
            for j in range(i + 1, len(self.solids)):
                if _solid_gap(self.solids[i], self.solids[j]) <= 0.0:
                    raise GeometryError(f"solids {i} and {j} overlap or touch")

    @property
    def scale(self) -> float:
        x0, y0, x1, y1 = self.domain
        return max(x1 - x0, y1 - y0)


@dataclass(frozen=True)
class Pore:
    """A pore body: site position, inscribed radius, and boundary adjacency."""

    position: tuple
    radius: float
    inlet: bool = False
    outlet: bool = False


@dataclass(frozen=True)
class Throat:
    """Connection between pores i and j through the gap between two flanks.

    Each flank is ("solid", index) or ("wall", side).  length is the
    site-to-site distance, width the constriction gap at the saddle.
    """

    i: int
    j: int
    length: float
    width: float
    flanks: tuple = None


@dataclass(frozen=True)
class NetworkTopology:
    pores: tuple
    throats: tuple

    def __post_init__(self):
        n = len(self.pores)
        for t in self.throats:
            if t.i == t.j or not (0 <= t.i < n and 0 <= t.j < n):
                raise GeometryError(f"throat {t} does not separate two distinct pores")
            if not (t.length > 0 and t.width > 0):
                raise GeometryError(f"throat {t} has non-positive length or width")


@dataclass(frozen=True)
class InterfaceSegment:
    """Straight segment bounding a pore: an internal face or an open end.

    kind is "internal", "inlet", or "outlet".  For internal faces the
    adjacency is (lo, hi) pore ids and the endpoints are ordered so the
    left-hand normal of a->b points from pore lo into pore hi.  Boundary
    faces carry a single-pore adjacency.  ids are 1-based and numbered
    separately for internal and boundary faces.
    """

    id: int
    a: tuple
    b: tuple
    kind: str
    adjacency: tuple

    @property
    def length(self) -> float:
        return math.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1])

    @property
    def midpoint(self) -> tuple:
        return ((self.a[0] + self.b[0]) / 2.0, (self.a[1] + self.b[1]) / 2.0)

    def normal(self) -> np.ndarray:
        d = np.array([self.b[0] - self.a[0], self.b[1] - self.a[1]])
        n = np.array([d[1], -d[0]])
        length = math.hypot(*n)
        if length == 0:
            raise GeometryError(f"degenerate interface segment {self.id}")
        return n / length


# ---------------------------------------------------------------------------
# basic queries


def _intersects_domain(solid, domain) -> bool:
    x0, y0, x1, y1 = domain
    if solid.kind == "rect":
        x, y, w, h = solid.params
        return x < x1 and x + w > x0 and y < y1 and y + h > y0
    cx, cy, r = solid.params
    qx, qy = min(max(cx, x0), x1), min(max(cy, y0), y1)
    return math.hypot(cx - qx, cy - qy) < r


def _solid_gap(a, b) -> float:
    """Boundary-to-boundary gap between two solids (negative on overlap)."""
    if a.kind == "disk" and b.kind == "disk":
        return math.hypot(*(a.center - b.center)) - a.params[2] - b.params[2]
    if a.kind == "rect" and b.kind == "rect":
        ax, ay, aw, ah = a.params
        bx, by, bw, bh = b.params
        dx = max(ax - (bx + bw), bx - (ax + aw))
        dy = max(ay - (by + bh), by - (ay + ah))
        if dx > 0 or dy > 0:
            return math.hypot(max(dx, 0.0), max(dy, 0.0))
        return max(dx, dy)
    disk, rect = (a, b) if a.kind == "disk" else (b, a)
    return rect.signed_distance(disk.center[:2] if hasattr(disk.center, "__len__") else disk.center) - disk.params[2]


def distance_to_solid(spec: GeometrySpec, p) -> float:
    """Distance from p to the nearest solid boundary; 0 inside a solid.

    Returns +inf when the packing is empty.
    """
    if not spec.solids:
        return math.inf
    return min(s.distance(p) for s in spec.solids)


def _wall_closest(domain, side, p):
    x0, y0, x1, y1 = domain
    if side == "left":
        return np.array([x0, min(max(p[1], y0), y1)])
    if side == "right":
        return np.array([x1, min(max(p[1], y0), y1)])
    if side == "bottom":
        return np.array([min(max(p[0], x0), x1), y0])
    return np.array([min(max(p[0], x0), x1), y1])


def _entity_distance(spec, ent, p) -> float:
    kind, ref = ent
    if kind == "solid":
        return spec.solids[ref].distance(p)
    q = _wall_closest(spec.domain, ref, p)
    return math.hypot(p[0] - q[0], p[1] - q[1])


def _entity_closest(spec, ent, p) -> np.ndarray:
    kind, ref = ent
    if kind == "solid":
        return spec.solids[ref].closest_point(p)
    return _wall_closest(spec.domain, ref, p)


def _entity_ref_point(spec, ent, other_rep=None) -> np.ndarray:
    kind, ref = ent
    if kind == "solid":
        return spec.solids[ref].center
    # a wall has no center; use the projection of the partner's center
    anchor = other_rep if other_rep is not None else np.array(
        [(spec.domain[0] + spec.domain[2]) / 2.0, (spec.domain[1] + spec.domain[3]) / 2.0]
    )
    return _wall_closest(spec.domain, ref, anchor)


# ---------------------------------------------------------------------------
# saddle localisation


def _equidistant_point(spec, ent_a, ent_b, base, direction, halfspan):
    """Root of dist_a - dist_b along base + t*direction, or None."""

    def f(t):
        q = base + t * direction
        return _entity_distance(spec, ent_a, q) - _entity_distance(spec, ent_b, q)

    ts = np.linspace(-halfspan, halfspan, 17)
    vals = [f(t) for t in ts]
    for k in range(len(ts) - 1):
        va, vb = vals[k], vals[k + 1]
        if va == 0.0:
            return base + ts[k] * direction
        if va * vb < 0.0:
            lo, hi, flo = ts[k], ts[k + 1], va
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                fm = f(mid)
                if fm == 0.0 or hi - lo < 1e-14 * max(1.0, halfspan):
                    return base + mid * direction
                if flo * fm < 0.0:
                    hi = mid
                else:
                    lo, flo = mid, fm
            return base + 0.5 * (lo + hi) * direction
    if vals[-1] == 0.0:
        return base + ts[-1] * direction
    return None


def saddle_point(spec: GeometrySpec, ent_a, ent_b):
    """Narrowest point of the gap between two flanking entities.

    Minimises the distance field along the locus of points equidistant from
    the two flanks (golden-section search, position tolerance 1e-10) and
    returns (point, min_distance).
    """
    rep_a = _entity_ref_point(spec, ent_a, _entity_ref_point(spec, ent_b) if ent_b[0] == "solid" else None)
    rep_b = _entity_ref_point(spec, ent_b, rep_a)
    if ent_a[0] == "wall":
        rep_a = _entity_ref_point(spec, ent_a, rep_b)
    axis = rep_b - rep_a
    span = math.hypot(*axis)
    if span == 0:
        raise GeometryError("flanking entities coincide")
    axis = axis / span
    perp = np.array([-axis[1], axis[0]])
    anchor = 0.5 * (rep_a + rep_b)

    def locus_distance(s):
        q = _equidistant_point(spec, ent_a, ent_b, anchor + s * perp, axis, span)
        if q is None:
            return None, math.inf
        return q, _entity_distance(spec, ent_a, q)

    # coarse scan for a bracket, then golden-section refinement
    ss = np.linspace(-span, span, 33)
    ds = [locus_distance(s)[1] for s in ss]
    k = int(np.argmin(ds))
    if not math.isfinite(ds[k]):
        raise GeometryError("no equidistant locus found between flanking entities")
    lo = ss[max(k - 1, 0)]
    hi = ss[min(k + 1, len(ss) - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = locus_distance(c)[1], locus_distance(d)[1]
    while b - a > _GOLDEN_TOL:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = locus_distance(c)[1]
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = locus_distance(d)[1]
    s_star = 0.5 * (a + b)
    q, dist = locus_distance(s_star)
    if q is None:
        raise GeometryError("saddle search left the equidistant locus")

    # parallel facing faces give a flat-bottomed valley with no unique
    # minimiser; report the centre of the plateau so the interface sits
    # mid-gap (a no-op for strictly convex valleys)
    tol_flat = dist * 1e-9 + 1e-12 * max(spec.scale, 1.0)

    def on_plateau(s):
        return locus_distance(s)[1] <= dist + tol_flat

    edges = []
    for limit in (ss[0], ss[-1]):
        inner, outer = s_star, limit
        if on_plateau(outer):
            edges.append(outer)
            continue
        for _ in range(60):
            mid = 0.5 * (inner + outer)
            if on_plateau(mid):
                inner = mid
            else:
                outer = mid
        edges.append(inner)
    q2, dist2 = locus_distance(0.5 * (edges[0] + edges[1]))
    if q2 is not None and dist2 <= dist + tol_flat:
        q, dist = q2, min(dist, dist2)
    return q, dist


# ---------------------------------------------------------------------------
# interface placement


def _segment_in_void(spec, a, b, samples=65) -> bool:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    tol = 1e-12 * max(spec.scale, 1.0)
    for k in range(samples):
        t = (k + 0.5) / samples
        if distance_to_solid(spec, a + t * (b - a)) <= tol:
            return False
    return True


def _derive_flanks(spec, midpoint):
    """Two nearest entities at a point, with an ambiguity guard."""
    cand = [(("solid", k), spec.solids[k].distance(midpoint)) for k in range(len(spec.solids))]
    cand += [(("wall", s), _entity_distance(spec, ("wall", s), midpoint)) for s in WALL_SIDES]
    cand.sort(key=lambda e: e[1])
    if len(cand) < 2:
        raise GeometryError("cannot determine flanking solids")
    if len(cand) > 2 and cand[2][1] - cand[1][1] < 1e-9 * max(spec.scale, 1.0):
        raise GeometryError(f"ambiguous flanking solids near {tuple(midpoint)}")
    return cand[0][0], cand[1][0]


def _boundary_open_intervals(spec, side):
    """Open (void) y-intervals of the inlet or outlet edge."""
    x0, y0, x1, y1 = spec.domain
    xe = x0 if side == "inlet" else x1
    covered = []
    for s in spec.solids:
        if s.kind == "rect":
            x, y, w, h = s.params
            if x <= xe <= x + w:
                covered.append((max(y, y0), min(y + h, y1)))
        else:
            cx, cy, r = s.params
            dx = abs(cx - xe)
            if dx < r:
                half = math.sqrt(r * r - dx * dx)
                covered.append((max(cy - half, y0), min(cy + half, y1)))
    covered.sort()
    out = []
    cursor = y0
    for lo, hi in covered:
        if lo > cursor:
            out.append((cursor, lo))
        cursor = max(cursor, hi)
    if cursor < y1:
        out.append((cursor, y1))
    tol = 1e-9 * max(spec.scale, 1.0)
    return [(lo, hi) for lo, hi in out if hi - lo > tol]


def place_interfaces(spec: GeometrySpec, topology: NetworkTopology):
    """Place one straight segment per throat plus the open boundary faces.

    Each internal segment joins the nearest points on the throat's two
    flanking entities, passing through the saddle of the distance field.
    Deterministic: identical inputs give bit-identical output.
    """
    sites = [np.array(p.position, float) for p in topology.pores]
    segments = []
    alpha = 0
    for throat in topology.throats:
        flanks = throat.flanks
        if flanks is None:
            mid = 0.5 * (sites[throat.i] + sites[throat.j])
            flanks = _derive_flanks(spec, mid)
        saddle, dist = saddle_point(spec, flanks[0], flanks[1])
        if dist <= 0.0:
            raise GeometryError(f"throat between pores {throat.i} and {throat.j} is blocked")
        a = _entity_closest(spec, flanks[0], saddle)
        b = _entity_closest(spec, flanks[1], saddle)
        if math.hypot(*(b - a)) <= 0.0:
            raise GeometryError(f"degenerate interface for throat ({throat.i}, {throat.j})")
        lo, hi = min(throat.i, throat.j), max(throat.i, throat.j)
        normal = np.array([b[1] - a[1], -(b[0] - a[0])])
        if float(np.dot(normal, sites[hi] - sites[lo])) < 0.0:
            a, b = b, a
        if not _segment_in_void(spec, a, b):
            raise GeometryError(
                f"interface for throat ({throat.i}, {throat.j}) crosses a solid"
            )
        alpha += 1
        segments.append(
            InterfaceSegment(alpha, tuple(a), tuple(b), "internal", (lo, hi))
        )

    boundary = []
    bid = 0
    for side, xe in (("inlet", spec.domain[0]), ("outlet", spec.domain[2])):
        for lo, hi in _boundary_open_intervals(spec, side):
            probe = np.array([xe, 0.5 * (lo + hi)])
            dists = [math.hypot(*(s - probe)) for s in sites]
            pore = int(np.argmin(dists))
            bid += 1
            boundary.append(
                InterfaceSegment(bid, (xe, lo), (xe, hi), side, (pore,))
            )
    return segments + boundary


def perturb_interfaces(spec: GeometrySpec, segments, eps: float, seed: int):
    """Randomly displace internal-interface endpoints by at most eps.

    Each endpoint moves by a vector drawn uniformly from the disk of radius
    r*eps, with r itself uniform on [0, 1].  Endpoints that land inside a
    solid are re-projected to the void with a small clearance; boundary
    faces are left untouched.  Deterministic for a fixed seed (counter-based
    Philox stream).
    """
    if eps < 0:
        raise GeometryError(f"perturbation radius must be non-negative, got {eps!r}")
    rng = Generator(Philox(seed))
    out = []
    for seg in segments:
        if seg.kind != "internal" or eps == 0.0:
            out.append(seg)
            continue
        pts = []
        for endpoint in (seg.a, seg.b):
            # re-projection can push a draw slightly past eps (curved
            # flanks amplify radially), so redraw until the final point
            # honors the displacement bound
            for _ in range(200):
                r = rng.uniform()
                while True:  # rejection sampling, uniform in the unit disk
                    y = rng.uniform(-1.0, 1.0, size=2)
                    if y @ y <= 1.0:
                        break
                p = np.asarray(endpoint, float) + r * eps * y
                p = _project_to_void(spec, p)
                if math.hypot(*(p - np.asarray(endpoint, float))) <= eps + 10.0 * _CLEARANCE:
                    break
            else:
                raise GeometryError(
                    f"interface {seg.id}: no admissible perturbation within {eps}"
                )
            pts.append(p)
        a, b = pts
        if math.hypot(*(b - a)) <= 1e-12 * max(spec.scale, 1.0):
            raise GeometryError(f"perturbed interface {seg.id} collapsed to a point")
        if not _segment_in_void(spec, a, b):
            raise GeometryError(f"perturbed interface {seg.id} crosses a solid after projection")
        out.append(replace(seg, a=tuple(a), b=tuple(b)))
    return out


def _project_to_void(spec, p):
    x0, y0, x1, y1 = spec.domain
    p = np.array([min(max(p[0], x0), x1), min(max(p[1], y0), y1)])
    for s in spec.solids:
        if s.contains(p):
            p = s.closest_point(p) + _CLEARANCE * s.outward_from(p)
            break
    if spec.solids and distance_to_solid(spec, p) < 0.0:
        raise GeometryError("perturbed endpoint could not be re-projected to the void")
    return p


def extend_segment_to_boundaries(spec: GeometrySpec, seg: InterfaceSegment):
    """Stretch an internal segment along its own line until it meets the
    solid phase (or a domain edge) on both ends, so it separates its pores.

    No-op for endpoints already resting on a boundary.
    """
    if seg.kind != "internal":
        return seg
    a = np.asarray(seg.a, float)
    b = np.asarray(seg.b, float)
    u = b - a
    length = math.hypot(*u)
    u = u / length

    def contact_margin(p):
        x0, y0, x1, y1 = spec.domain
        m = min(p[0] - x0, x1 - p[0], p[1] - y0, y1 - p[1])
        if spec.solids:
            m = min(m, min(s.signed_distance(p) for s in spec.solids))
        return m

    def extend(point, direction):
        if contact_margin(point) <= 1e-12 * max(spec.scale, 1.0):
            return point
        t_hi = 2.0 * spec.scale
        n = 4096
        prev = 0.0
        for k in range(1, n + 1):
            t = t_hi * k / n
            if contact_margin(point + t * direction) <= 0.0:
                lo, hi = prev, t
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    if contact_margin(point + mid * direction) <= 0.0:
                        hi = mid
                    else:
                        lo = mid
                return point + hi * direction
            prev = t
        raise GeometryError(f"interface {seg.id} could not be extended to a boundary")

    a2 = extend(a, -u)
    b2 = extend(b, u)
    return replace(seg, a=tuple(a2), b=tuple(b2))


# ---------------------------------------------------------------------------
# topology extraction


def extract_topology(spec: GeometrySpec) -> NetworkTopology:
    """Pore sites and throats of the void space.

    Sites are the local maxima of the distance field, realised as the
    circumcenters of the Delaunay triangulation of the solid centers
    augmented with their reflections across the four walls.  Throats join
    sites whose triangles share a Delaunay edge; the shared edge's two
    generators are the throat flanks.  A reflected generator stands for its
    wall.  Degenerate (cocircular) packings are resolved by a deterministic
    jitter tie-break and coincident sites are merged.
    """
    x0, y0, x1, y1 = spec.domain
    if not spec.solids:
        pore = Pore(
            position=((x0 + x1) / 2.0, (y0 + y1) / 2.0),
            radius=min(x1 - x0, y1 - y0) / 2.0,
            inlet=True,
            outlet=True,
        )
        return NetworkTopology(pores=(pore,), throats=())

    scale = spec.scale
    pts = []
    gens = []
    for k, s in enumerate(spec.solids):
        c = s.center
        pts.append(c)
        gens.append(("solid", k))
        for side, mirrored in (
            ("left", [2 * x0 - c[0], c[1]]),
            ("right", [2 * x1 - c[0], c[1]]),
            ("bottom", [c[0], 2 * y0 - c[1]]),
            ("top", [c[0], 2 * y1 - c[1]]),
        ):
            if math.hypot(mirrored[0] - c[0], mirrored[1] - c[1]) <= 1e-12 * scale:
                continue  # center sits on this wall; the mirror is the point itself
            pts.append(np.array(mirrored))
            gens.append(("wall", side))
    pts = np.array(pts, dtype=float)
    rng = Generator(Philox(spec.seed))
    pts = pts + rng.uniform(-1e-9, 1e-9, size=pts.shape) * scale

    if len(pts) < 3:
        raise GeometryError("too few generator points for topology extraction")
    tri = Delaunay(pts)

    tol_in = 1e-9 * scale
    # circumcenters that sit exactly on a wall in exact arithmetic (mirror
    # pairs) land on either side of it after jitter; keep them within the
    # same slack used for cocircular merging, clamped back into the box
    tol_keep = 1e-6 * scale
    cc = np.full((len(tri.simplices), 2), np.nan)
    keep = np.zeros(len(tri.simplices), dtype=bool)
    for t, simplex in enumerate(tri.simplices):
        center = _circumcenter(pts[simplex])
        if center is None:
            continue
        cc[t] = center
        if not (x0 - tol_keep <= center[0] <= x1 + tol_keep and y0 - tol_keep <= center[1] <= y1 + tol_keep):
            continue
        if distance_to_solid(spec, center) <= tol_in:
            continue
        cc[t] = (min(max(center[0], x0), x1), min(max(center[1], y0), y1))
        keep[t] = True

    # merge coincident circumcenters (cocircular quads collapse to one site)
    site_of = {}
    sites = []
    merge_tol = 1e-6 * scale
    order = [t for t in range(len(tri.simplices)) if keep[t]]
    for t in order:
        placed = False
        for sid, members in enumerate(sites):
            ref = cc[members[0]]
            if abs(cc[t][0] - ref[0]) <= merge_tol and abs(cc[t][1] - ref[1]) <= merge_tol:
                members.append(t)
                site_of[t] = sid
                placed = True
                break
        if not placed:
            site_of[t] = len(sites)
            sites.append([t])
    if any(len(m) > 1 for m in sites):
        log.info("degenerate packing: merged %d coincident pore sites",
                 sum(len(m) - 1 for m in sites))

    positions = []
    for members in sites:
        positions.append(cc[members].mean(axis=0))

    wall_tol = 1e-6 * scale

    # a site whose void opens through the inlet/outlet wall between two real
    # solids (no mirror in between: the solids sit on the wall) is a boundary
    # pore even though its center lies inside the domain.  The dropped
    # neighbor's circumcenter tells which wall the gap crosses.
    open_flags = {}
    for t, simplex in enumerate(tri.simplices):
        if not keep[t]:
            continue
        for k in range(3):
            n = tri.neighbors[t][k]
            if n < 0 or keep[n] or not np.all(np.isfinite(cc[n])):
                continue
            if x0 - tol_keep <= cc[n][0] <= x1 + tol_keep:
                continue  # neighbor dropped for some other reason than an x-wall
            shared = [v for v in simplex if v != simplex[k]]
            ga, gb = gens[shared[0]], gens[shared[1]]
            if ga[0] == "wall" or gb[0] == "wall" or ga == gb:
                continue
            try:
                _, dist = saddle_point(spec, ga, gb)
            except GeometryError:
                continue
            if 2.0 * dist <= 1e-9 * scale:
                continue
            flags = open_flags.setdefault(site_of[t], [False, False])
            if cc[n][0] < x0:
                flags[0] = True
            else:
                flags[1] = True

    pores = []
    for sid, p in enumerate(positions):
        p = np.array([min(max(p[0], x0), x1), min(max(p[1], y0), y1)])
        opened = open_flags.get(sid, (False, False))
        pores.append(
            Pore(
                position=(float(p[0]), float(p[1])),
                radius=float(distance_to_solid(spec, p)),
                inlet=bool(abs(p[0] - x0) <= wall_tol or opened[0]),
                outlet=bool(abs(p[0] - x1) <= wall_tol or opened[1]),
            )
        )

    throats = {}
    for t, simplex in enumerate(tri.simplices):
        if not keep[t]:
            continue
        for k in range(3):
            n = tri.neighbors[t][k]
            if n < t or n < 0 or not keep[n]:
                continue
            si, sj = site_of[t], site_of[n]
            if si == sj:
                continue
            shared = [v for v in simplex if v != simplex[k]]
            ga, gb = gens[shared[0]], gens[shared[1]]
            if ga[0] == "wall" and gb[0] == "wall":
                continue  # mirror-side gap; the real counterpart is elsewhere
            if ga == gb:
                continue
            try:
                _, dist = saddle_point(spec, ga, gb)
            except GeometryError:
                continue
            width = 2.0 * dist
            if width <= 1e-9 * scale:
                log.debug("blocked throat between sites %d and %d skipped", si, sj)
                continue
            # the same site pair can meet through several distinct gaps (for
            # example on both sides of one solid); each gap is its own throat
            key = (min(si, sj), max(si, sj), tuple(sorted((ga, gb))))
            length = math.hypot(
                positions[si][0] - positions[sj][0], positions[si][1] - positions[sj][1]
            )
            if key not in throats:
                throats[key] = Throat(key[0], key[1], float(length), float(width), (ga, gb))

    topo = NetworkTopology(pores=tuple(pores), throats=tuple(throats.values()))
    _check_connectivity(topo)
    return topo


def _circumcenter(tri_pts):
    a, b, c = tri_pts
    d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
    if d == 0.0:
        return None
    ux = ((a @ a) * (b[1] - c[1]) + (b @ b) * (c[1] - a[1]) + (c @ c) * (a[1] - b[1])) / d
    uy = ((a @ a) * (c[0] - b[0]) + (b @ b) * (a[0] - c[0]) + (c @ c) * (b[0] - a[0])) / d
    return np.array([ux, uy])


def _check_connectivity(topo: NetworkTopology):
    inlet = [k for k, p in enumerate(topo.pores) if p.inlet]
    outlet = [k for k, p in enumerate(topo.pores) if p.outlet]
    if not inlet or not outlet:
        return
    n = len(topo.pores)
    if not topo.throats:
        if not any(p.inlet and p.outlet for p in topo.pores):
            raise GeometryError("inlet and outlet pores are not connected")
        return
    rows = [t.i for t in topo.throats]
    cols = [t.j for t in topo.throats]
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    ncomp, labels = connected_components(adj, directed=False)
    inlet_labels = {labels[k] for k in inlet}
    outlet_labels = {labels[k] for k in outlet}
    if not (inlet_labels & outlet_labels):
        raise GeometryError("inlet and outlet pores are not connected")


# ---------------------------------------------------------------------------
# serialization


def load_geometry(path) -> GeometrySpec:
    """Read a geometry description from JSON.

    Schema: {"domain": [x0, y0, x1, y1], "solids": [{"disk": [cx, cy, r]}
    or {"rect": [x, y, w, h]}, ...], "p_in": f, "p_out": f, "nu": f,
    "seed": n}.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise GeometryError(f"cannot read geometry file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise GeometryError(f"malformed geometry JSON in {path}: {exc}") from exc
    return geometry_from_dict(raw)


def geometry_from_dict(raw) -> GeometrySpec:
    try:
        domain = tuple(float(v) for v in raw["domain"])
        if len(domain) != 4:
            raise GeometryError(f"domain must have four entries, got {raw['domain']!r}")
        solids = []
        for entry in raw.get("solids", []):
            if "disk" in entry:
                solids.append(Solid("disk", tuple(float(v) for v in entry["disk"])))
            elif "rect" in entry:
                solids.append(Solid("rect", tuple(float(v) for v in entry["rect"])))
            else:
                raise GeometryError(f"unknown solid entry {entry!r}")
        return GeometrySpec(
            domain=domain,
            solids=tuple(solids),
            p_in=float(raw["p_in"]),
            p_out=float(raw["p_out"]),
            nu=float(raw["nu"]),
            seed=int(raw.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, GeometryError):
            raise
        raise GeometryError(f"invalid geometry description: {exc}") from exc


def geometry_to_dict(spec: GeometrySpec) -> dict:
    solids = []
    for s in spec.solids:
        solids.append({s.kind: list(s.params)})
    return {
        "domain": list(spec.domain),
        "solids": solids,
        "p_in": spec.p_in,
        "p_out": spec.p_out,
        "nu": spec.nu,
        "seed": spec.seed,
    }


def save_geometry(spec: GeometrySpec, path):
    with open(path, "w") as fh:
        json.dump(geometry_to_dict(spec), fh, indent=2)
        fh.write("\n")
