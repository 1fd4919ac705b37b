"""Reference geometries used across the test suite and the experiment
scripts: straight channels with optional cross-cuts, and a rectangular
solid lattice with twenty pore bodies.
"""

from __future__ import annotations

from .geometry import GeometrySpec, InterfaceSegment, Solid
from .meshkit import build_structured_mesh


def channel_spec(length=2.0, width=1.0, nu=1.0, p_in=1.0, p_out=0.0) -> GeometrySpec:
    """Empty rectangular duct, flow along x."""
    return GeometrySpec(
        domain=(0.0, 0.0, float(length), float(width)),
        solids=(),
        p_in=p_in,
        p_out=p_out,
        nu=nu,
    )


def channel_exact_flux(spec: GeometrySpec) -> float:
    """Plane Poiseuille volumetric rate per unit depth: w^3 dp / (12 nu L)."""
    x0, y0, x1, y1 = spec.domain
    L, w = x1 - x0, y1 - y0
    return w**3 * (spec.p_in - spec.p_out) / (12.0 * spec.nu * L)


def channel_velocity(spec: GeometrySpec):
    x0, y0, x1, y1 = spec.domain
    L, w = x1 - x0, y1 - y0
    dp = spec.p_in - spec.p_out
    coef = dp / (2.0 * spec.nu * L)

    def u(x, y):
        yy = y - y0
        return (coef * yy * (w - yy), 0.0)

    return u


def channel_pressure(spec: GeometrySpec):
    x0, y0, x1, y1 = spec.domain
    L = x1 - x0
    dp = spec.p_in - spec.p_out

    def p(x, y):
        return spec.p_in - dp * (x - x0) / L

    return p


def channel_cuts(spec: GeometrySpec, xs) -> list:
    """Vertical internal faces across a channel at the given x positions."""
    x0, y0, x1, y1 = spec.domain
    segs = []
    for k, x in enumerate(sorted(xs)):
        if not (x0 < x < x1):
            raise ValueError(f"cut {x} outside the channel")
        segs.append(
            InterfaceSegment(
                id=k + 1,
                a=(float(x), y0),
                b=(float(x), y1),
                kind="internal",
                adjacency=(k, k + 1),
            )
        )
    return segs


def split_channel_case(h=0.125, length=2.0, width=1.0, cuts=(1.0,), **kw):
    """Channel with vertical cross-cuts, meshed; returns (spec, segments,
    mesh)."""
    spec = channel_spec(length=length, width=width, **kw)
    segs = channel_cuts(spec, cuts)
    mesh = build_structured_mesh(spec, segs, h)
    return spec, segs, mesh


# ---------------------------------------------------------------------------
# the twenty-pore lattice


LATTICE_PITCH = 2.0
LATTICE_SIDE = 1.2
LATTICE_NX = 5   # pore columns
LATTICE_NY = 4   # pore rows


def lattice_spec(nu=1.0, p_in=1.0, p_out=0.0, seed=0) -> GeometrySpec:
    """Square solids on every lattice point of a 10 x 8 box; the void is a
    5 x 4 grid of pore bodies linked by straight gaps of width 0.8."""
    P, S = LATTICE_PITCH, LATTICE_SIDE
    half = S / 2.0
    solids = []
    for i in range(LATTICE_NX + 1):
        for j in range(LATTICE_NY + 1):
            solids.append(Solid("rect", (P * i - half, P * j - half, S, S)))
    return GeometrySpec(
        domain=(0.0, 0.0, P * LATTICE_NX, P * LATTICE_NY),
        solids=tuple(solids),
        p_in=p_in,
        p_out=p_out,
        nu=nu,
        seed=seed,
    )


def lattice_segments(spec: GeometrySpec = None) -> list:
    """Internal faces of the lattice in exact arithmetic: 16 vertical and
    15 horizontal gap cross-sections, numbered row-major."""
    P = LATTICE_PITCH
    half = LATTICE_SIDE / 2.0
    segs = []
    next_id = 1
    for i in range(1, LATTICE_NX):        # vertical faces at x = 2i
        for r in range(LATTICE_NY):
            x = P * i
            lo = P * r + half
            hi = P * (r + 1) - half
            segs.append(
                InterfaceSegment(
                    id=next_id,
                    a=(x, lo),
                    b=(x, hi),
                    kind="internal",
                    adjacency=(r * LATTICE_NX + (i - 1), r * LATTICE_NX + i),
                )
            )
            next_id += 1
    for j in range(1, LATTICE_NY):        # horizontal faces at y = 2j
        for c in range(LATTICE_NX):
            y = P * j
            lo = P * c + half
            hi = P * (c + 1) - half
            segs.append(
                InterfaceSegment(
                    id=next_id,
                    a=(lo, y),
                    b=(hi, y),
                    kind="internal",
                    adjacency=((j - 1) * LATTICE_NX + c, j * LATTICE_NX + c),
                )
            )
            next_id += 1
    return segs


def lattice_case(h=0.2, nu=1.0, p_in=1.0, p_out=0.0, seed=0):
    """The lattice meshed at pitch h; returns (spec, segments, mesh)."""
    spec = lattice_spec(nu=nu, p_in=p_in, p_out=p_out, seed=seed)
    segs = lattice_segments(spec)
    mesh = build_structured_mesh(spec, segs, h)
    return spec, segs, mesh


def series3_channel_case(h=0.125, **kw):
    """Three pore bodies in series: a 3 x 1 channel cut at x = 1 and 2."""
    return split_channel_case(h=h, length=3.0, width=1.0, cuts=(1.0, 2.0), **kw)
