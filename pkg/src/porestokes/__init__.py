"""Pore-scale Stokes flow toolkit.

Solves 2-D incompressible Stokes flow in porous geometries three ways:
monolithic Taylor-Hood finite elements, a domain-decomposition pore-network
method coupling per-pore Stokes solves through interface tractions, and a
classical conductance-based pore network; plus calibration of network
conductances from the per-pore pressure-to-flux maps.
"""

__version__ = "0.1.0"

from .geometry import (
    GeometrySpec,
    GeometryError,
    InterfaceSegment,
    NetworkTopology,
    Pore,
    Solid,
    Throat,
    extract_topology,
    load_geometry,
    perturb_interfaces,
    place_interfaces,
    save_geometry,
)
from .meshkit import (
    Mesh,
    MeshError,
    SubdomainMesh,
    build_fitted_mesh,
    build_structured_mesh,
    extract_subdomains,
    read_mesh,
    refine,
    validate_mesh,
    write_mesh,
)
from .stokesfem import (
    FESpace,
    FlowField,
    SolverError,
    assemble,
    boundary_flux,
    build_space,
    error_norms,
    face_flux,
    neumann_load,
    solve_global,
    solve_saddle,
)
from .ddpnm import (
    DdpnmError,
    DdpnmResult,
    PoreOperator,
    pore_operator,
    result_report,
    run_ddpnm,
    stitch_fields,
    validate_dtn,
)
from .cpnm import (
    DisconnectedNetworkError,
    NetworkError,
    PoreNetwork,
    NetworkSolution,
    conductance_2d,
    network_from_topology,
    solve_network,
)
from .calibrate import (
    CalibrationError,
    CalibratedNetwork,
    FitOptions,
    HalfThroatFit,
    build_npnm,
    calibration_target,
    compare_tractions,
    fit_half_throats,
    gi_star,
    perron_init,
)

__all__ = [name for name in dir() if not name.startswith("_")]
