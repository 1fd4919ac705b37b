"""Classical pore-network flow: planar Hagen-Poiseuille throat conductances
on an extracted topology, nodal mass balance, direct solve.

Boundary pores carry Dirichlet pressures (inlet pores the inlet value,
outlet pores the outlet value); interior pore pressures come from a
reduced symmetric positive definite graph Laplacian system.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as sla

from .geometry import NetworkTopology

log = logging.getLogger(__name__)


class NetworkError(ValueError):
    """Pore-network construction or solve failure."""


class DisconnectedNetworkError(NetworkError):
    """A connected component holds no boundary pore, so its pressures are
    undetermined; a structural defect of the input, not a numeric one."""


def conductance_2d(w: float, L: float, mu: float) -> float:
    """Conductance of a planar channel of width w and length L filled with
    a fluid of viscosity mu: w^3 / (12 mu L)."""
    if not (w > 0 and L > 0 and mu > 0):
        raise NetworkError(
            f"conductance needs positive width, length, viscosity; "
            f"got w={w!r}, L={L!r}, mu={mu!r}"
        )
    return w**3 / (12.0 * mu * L)


@dataclass
class PoreNetwork:
    """Flow graph: pore nodes with boundary roles and conducting throats.

    throats rows are (i, j, g, L, w); g must be finite and nonnegative.
    """

    positions: np.ndarray          # (n, 2)
    inlet: np.ndarray              # (n,) bool
    outlet: np.ndarray             # (n,) bool
    throats: list                  # of (i, j, g, L, w)

    def __post_init__(self):
        n = len(self.positions)
        for i, j, g, L, w in self.throats:
            if not (0 <= i < n and 0 <= j < n and i != j):
                raise NetworkError(f"throat ({i}, {j}) references missing pores")
            if not np.isfinite(g) or g < 0:
                raise NetworkError(f"throat ({i}, {j}) conductance {g!r} invalid")

    @property
    def n_pores(self) -> int:
        return len(self.positions)

    @property
    def boundary(self) -> np.ndarray:
        return self.inlet | self.outlet


def network_from_topology(topo: NetworkTopology, mu: float) -> PoreNetwork:
    """Geometric conductances from extracted throat widths and lengths."""
    positions = np.array([p.position for p in topo.pores], dtype=float)
    inlet = np.array([p.inlet for p in topo.pores], dtype=bool)
    outlet = np.array([p.outlet for p in topo.pores], dtype=bool)
    throats = []
    for t in topo.throats:
        g = conductance_2d(t.width, t.length, mu)
        throats.append((t.i, t.j, g, t.length, t.width))
    return PoreNetwork(positions=positions, inlet=inlet, outlet=outlet, throats=throats)


@dataclass
class NetworkSolution:
    pressures: np.ndarray
    throat_fluxes: np.ndarray      # aligned with network.throats, q_ij into i
    inlet_flux: float              # net flow entering the network at inlets
    outlet_flux: float             # net flow entering the network at outlets
    imbalance: float               # worst relative interior mass defect
    dropped_throats: list = field(default_factory=list)


def solve_network(net: PoreNetwork, p_in: float, p_out: float) -> NetworkSolution:
    """Pressures and fluxes under Dirichlet boundary pores.

    Raises NetworkError when a connected component holds no boundary pore
    (the reduced system would be singular) or when the computed pressures
    violate the discrete maximum principle.
    """
    n = net.n_pores
    active = []
    dropped = []
    for k, (i, j, g, L, w) in enumerate(net.throats):
        if g == 0.0:
            dropped.append(k)
            log.warning("dropping zero-conductance throat (%d, %d)", i, j)
        else:
            active.append((k, i, j, g))

    if n == 0:
        raise NetworkError("network has no pores")
    boundary = net.boundary.copy()
    both = net.inlet & net.outlet
    if both.any():
        log.warning("%d pores marked both inlet and outlet; using inlet pressure",
                    int(both.sum()))

    rows = [i for _, i, j, _ in active] + [j for _, i, j, _ in active]
    cols = [j for _, i, j, _ in active] + [i for _, i, j, _ in active]
    vals = [g for _, _, _, g in active] * 2
    adj = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    n_comp, labels = csgraph.connected_components(adj, directed=False)
    for comp in range(n_comp):
        members = labels == comp
        if not boundary[members].any():
            raise DisconnectedNetworkError(
                f"component with pores {np.where(members)[0].tolist()} has no "
                f"boundary pore; the system is singular"
            )

    pressures = np.zeros(n)
    pressures[net.outlet] = p_out
    pressures[net.inlet] = p_in  # inlet wins when a pore is flagged both

    interior = np.where(~boundary)[0]
    if len(interior):
        deg = np.asarray(adj.sum(axis=1)).ravel()
        L_full = sparse.diags(deg) - adj
        idx = {p: k for k, p in enumerate(interior)}
        L_ii = L_full[interior][:, interior].tocsc()
        rhs = -np.asarray(
            L_full[interior][:, np.where(boundary)[0]]
            @ pressures[np.where(boundary)[0]]
        ).ravel()
        try:
            sol = sla.spsolve(L_ii, rhs)
        except RuntimeError as exc:
            raise NetworkError(f"network solve failed: {exc}") from exc
        if not np.all(np.isfinite(sol)):
            raise NetworkError("network solve produced non-finite pressures")
        pressures[interior] = sol
        res = np.linalg.norm(L_ii @ sol - rhs)
        if res > 1e-10 * max(np.linalg.norm(rhs), 1e-300):
            raise NetworkError(f"network residual {res:.3e} too large")

    lo, hi = min(p_in, p_out), max(p_in, p_out)
    slack = 1e-12 * max(abs(lo), abs(hi), 1.0)
    if pressures.min() < lo - slack or pressures.max() > hi + slack:
        raise NetworkError(
            f"pressures [{pressures.min():.6g}, {pressures.max():.6g}] leave "
            f"the boundary range [{lo:.6g}, {hi:.6g}]"
        )

    fluxes = np.zeros(len(net.throats))
    for k, i, j, g in active:
        fluxes[k] = -g * (pressures[i] - pressures[j])

    # interior mass balance: sum of q_ij over neighbors of i must vanish
    net_in = np.zeros(n)
    scale = np.zeros(n)
    for k, i, j, g in active:
        net_in[i] += fluxes[k]
        net_in[j] -= fluxes[k]
        scale[i] += abs(fluxes[k])
        scale[j] += abs(fluxes[k])
    worst = 0.0
    flux_mag = float(np.abs(fluxes).max(initial=0.0))
    for p in interior:
        if scale[p] > 0:
            rel = abs(net_in[p]) / scale[p]
        else:
            rel = abs(net_in[p]) / max(flux_mag, 1e-300)
        worst = max(worst, rel)
        if rel > 1e-12:
            raise NetworkError(
                f"mass defect {net_in[p]:.3e} at interior pore {p} "
                f"(relative {rel:.3e})"
            )

    # outflow from boundary pores into the network
    inlet_flux = float(-net_in[net.inlet].sum())
    outlet_flux = float(-net_in[net.outlet & ~net.inlet].sum())
    return NetworkSolution(
        pressures=pressures,
        throat_fluxes=fluxes,
        inlet_flux=inlet_flux,
        outlet_flux=outlet_flux,
        imbalance=worst,
        dropped_throats=dropped,
    )
