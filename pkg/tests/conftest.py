"""Shared fixtures: the expensive solves are session-scoped so the suite
pays for each mesh + solve once."""

import os

import numpy as np
import pytest

from porestokes.ddpnm import run_ddpnm
from porestokes.fixtures import (
    channel_spec,
    lattice_case,
    series3_channel_case,
    split_channel_case,
)
from porestokes.meshkit import build_structured_mesh, read_mesh
from porestokes.geometry import load_geometry
from porestokes.stokesfem import solve_global

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXDIR = os.path.join(REPO, "fixtures")


@pytest.fixture(scope="session")
def repo_root():
    return REPO


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXDIR


@pytest.fixture(scope="session")
def channel_case():
    """Plain 2x1 duct at h = 0.125 with its monolithic solve."""
    spec = channel_spec()
    mesh = build_structured_mesh(spec, [], 0.125)
    field, info = solve_global(mesh, nu=spec.nu, p_in=spec.p_in, p_out=spec.p_out)
    return spec, mesh, field, info


@pytest.fixture(scope="session")
def split_dd():
    """Channel cut at x = 1, DD solve plus the monolithic reference."""
    spec, segs, mesh = split_channel_case(h=0.125)
    result = run_ddpnm(mesh, nu=spec.nu, p_in=spec.p_in, p_out=spec.p_out)
    ref, _ = solve_global(mesh, nu=spec.nu, p_in=spec.p_in, p_out=spec.p_out)
    return spec, segs, mesh, result, ref


@pytest.fixture(scope="session")
def series3_dd():
    """Three pores in series, DD solve."""
    spec, segs, mesh = series3_channel_case(h=0.125)
    result = run_ddpnm(mesh, nu=spec.nu, p_in=spec.p_in, p_out=spec.p_out)
    return spec, segs, mesh, result


@pytest.fixture(scope="session")
def lattice_pack():
    """Twenty-pore lattice at h = 0.2: DD result and monolithic reference."""
    spec, segs, mesh = lattice_case(h=0.2)
    result = run_ddpnm(mesh, nu=spec.nu, p_in=spec.p_in, p_out=spec.p_out)
    ref, _ = solve_global(mesh, nu=spec.nu, p_in=spec.p_in, p_out=spec.p_out)
    return spec, segs, mesh, result, ref


@pytest.fixture(scope="session")
def disk_model(fixtures_dir):
    """Shipped disk-packing fixture: geometry spec and body-fitted mesh."""
    spec = load_geometry(os.path.join(fixtures_dir, "model-problem.json"))
    base = os.path.join(fixtures_dir, "model-problem")
    mesh = read_mesh(base + ".node", base + ".ele", base + ".edge")
    return spec, mesh


def combined_error(space, U, P, U_ref, P_ref):
    from porestokes.stokesfem import error_norms

    return error_norms(space, U, P, U_ref, P_ref)["rel"]


def assert_close(a, b, tol, label=""):
    gap = abs(a - b)
    assert gap <= tol, f"{label} |{a!r} - {b!r}| = {gap:.3e} > {tol:.1e}"
