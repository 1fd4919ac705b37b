"""Command-line pipeline, exercised in-process through main(argv)."""

import filecmp
import json
import os

import pytest

from porestokes.cli import main
from porestokes.cpnm import DisconnectedNetworkError, NetworkError
from porestokes.fixtures import channel_spec, lattice_spec, series3_channel_case
from porestokes.geometry import save_geometry


@pytest.fixture(scope="module")
def cli_dir(tmp_path_factory):
    """Geometry files shared by the command runs."""
    root = tmp_path_factory.mktemp("cli")
    save_geometry(channel_spec(), str(root / "channel.json"))
    save_geometry(lattice_spec(), str(root / "lattice.json"))
    spec3, _, _ = series3_channel_case(h=0.25)
    save_geometry(spec3, str(root / "series3.json"))
    return root


@pytest.fixture(scope="module")
def lattice_runs(cli_dir):
    """One DD lattice run per worker count, reused by several tests."""
    outs = {}
    for workers in (1, 4):
        out = cli_dir / f"dd_w{workers}"
        rc = main(["solve-ddpnm", "--geometry", str(cli_dir / "lattice.json"),
                   "--structured-h", "0.2", "--workers", str(workers),
                   "--out", str(out)])
        assert rc == 0
        outs[workers] = out
    return outs


class TestSolveFem:
    def test_channel_flux_and_outputs(self, cli_dir, capsys):
        out = cli_dir / "fem"
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--structured-h", "0.25", "--out", str(out)])
        assert rc == 0
        assert capsys.readouterr().out.startswith("fem: flux_in=")
        for name in ("fem_field.vtk", "fem_norms.csv", "fem_summary.json"):
            assert (out / name).stat().st_size > 0
        summary = json.loads((out / "fem_summary.json").read_text())
        assert summary["flux_out"] == pytest.approx(1.0 / 24.0, rel=1e-8)
        assert summary["flux_in"] == pytest.approx(-1.0 / 24.0, rel=1e-8)
        assert summary["n_triangles"] == 64

    def test_rerun_is_byte_identical(self, cli_dir):
        args = ["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                "--structured-h", "0.25"]
        a, b = cli_dir / "fem_a", cli_dir / "fem_b"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        for name in ("fem_field.vtk", "fem_norms.csv", "fem_summary.json"):
            assert filecmp.cmp(str(a / name), str(b / name), shallow=False)

    def test_refine_matches_halved_pitch(self, cli_dir):
        out = cli_dir / "fem_refine"
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--structured-h", "0.5", "--refine", "1", "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "fem_summary.json").read_text())
        assert summary["n_triangles"] == 64
        assert summary["flux_out"] == pytest.approx(1.0 / 24.0, rel=1e-8)

    def test_schur_cg_solver(self, cli_dir):
        out = cli_dir / "fem_cg"
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--structured-h", "0.25", "--solver", "schur-cg",
                   "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "fem_summary.json").read_text())
        assert summary["solver"]["method"] == "schur_cg"
        assert summary["flux_out"] == pytest.approx(1.0 / 24.0, rel=1e-7)

    def test_perturb_flag_builds_fitted_mesh(self, cli_dir):
        # a plain channel has no interfaces to move, but the flag must
        # route through the fitted mesher and still solve exactly
        out = cli_dir / "fem_pert"
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--structured-h", "0.25", "--perturb", "0.1",
                   "--seed", "3", "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "fem_summary.json").read_text())
        assert summary["flux_out"] == pytest.approx(1.0 / 24.0, rel=1e-8)


class TestSolveDdpnm:
    def test_lattice_report(self, lattice_runs):
        report = json.loads((lattice_runs[1] / "ddpnm_report.json").read_text())
        assert report["mode"] == "network"
        assert report["n_pores"] == 20
        assert report["n_interfaces"] == 31
        assert abs(report["flux_gap"]) <= 1e-10
        assert report["schur"]["smallest_ritz"] > 0
        assert len(report["tractions"]) == 31

    def test_worker_count_does_not_change_bytes(self, lattice_runs):
        for name in ("ddpnm_report.json", "ddpnm_field.vtk", "ddpnm_tractions.csv"):
            assert filecmp.cmp(str(lattice_runs[1] / name),
                               str(lattice_runs[4] / name), shallow=False)

    def test_tractions_csv_has_all_interfaces(self, lattice_runs):
        lines = (lattice_runs[1] / "ddpnm_tractions.csv").read_text().splitlines()
        assert len(lines) == 32  # header + 31 interfaces

    def test_reference_on_interface_free_geometry(self, cli_dir):
        # no interfaces: DD falls back to the monolithic path, so the
        # reference comparison is exactly self against self
        out = cli_dir / "dd_ref"
        rc = main(["solve-ddpnm", "--geometry", str(cli_dir / "series3.json"),
                   "--structured-h", "0.25", "--reference", "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "ddpnm_report.json").read_text())
        assert report["mode"] == "monolithic"
        assert report["errors_vs_reference"]["rel"] <= 1e-14
        assert (out / "ddpnm_reference.vtk").stat().st_size > 0


class TestSolveCpnm:
    def test_lattice_network(self, cli_dir, capsys):
        out = cli_dir / "cpnm"
        rc = main(["solve-cpnm", "--geometry", str(cli_dir / "lattice.json"),
                   "--out", str(out)])
        assert rc == 0
        assert capsys.readouterr().out.startswith("cpnm: pores=20")
        summary = json.loads((out / "cpnm_summary.json").read_text())
        assert summary["n_pores"] == 20
        assert summary["n_throats"] == 31
        assert summary["inlet_flux"] == pytest.approx(0.8**3 / 24.0, rel=1e-6)
        assert abs(summary["imbalance"]) <= 1e-12
        for name in ("cpnm_pores.csv", "cpnm_throats.csv", "cpnm_pressures.csv",
                     "cpnm_fluxes.csv", "cpnm_summary.json"):
            assert (out / name).stat().st_size > 0

    def test_disconnected_network_is_input_error(self, cli_dir, monkeypatch):
        import porestokes.cli as cli_mod

        def boom(net, p_in, p_out):
            raise DisconnectedNetworkError("component with pores [3] has no boundary pore")

        monkeypatch.setattr(cli_mod, "solve_network", boom)
        rc = main(["solve-cpnm", "--geometry", str(cli_dir / "lattice.json"),
                   "--out", str(cli_dir / "cpnm_disc")])
        assert rc == 2

    def test_numeric_network_failure_is_solver_error(self, cli_dir, monkeypatch):
        import porestokes.cli as cli_mod

        def boom(net, p_in, p_out):
            raise NetworkError("network residual too large")

        monkeypatch.setattr(cli_mod, "solve_network", boom)
        rc = main(["solve-cpnm", "--geometry", str(cli_dir / "lattice.json"),
                   "--out", str(cli_dir / "cpnm_num")])
        assert rc == 3


class TestCalibrate:
    def test_from_report(self, cli_dir, lattice_runs, capsys):
        out = cli_dir / "cal"
        rc = main(["calibrate",
                   "--from-report", str(lattice_runs[1] / "ddpnm_report.json"),
                   "--out", str(out)])
        assert rc == 0
        assert "rank_correlation=" in capsys.readouterr().out
        payload = json.loads((out / "calibration.json").read_text())
        comp = payload["comparison"]
        assert comp["n"] == 31
        assert comp["rank_correlation"] >= 0.95
        assert comp["rank_correlation"] == pytest.approx(0.9903, abs=2e-3)
        assert comp["rms_rel"] <= 1e-2
        assert len(payload["pores"]) == 20
        assert payload["dropped_faces"] == []
        assert (out / "calibration_comparison.csv").stat().st_size > 0

    def test_fit_iteration_cap_reported(self, cli_dir, lattice_runs):
        out = cli_dir / "cal_capped"
        rc = main(["calibrate",
                   "--from-report", str(lattice_runs[1] / "ddpnm_report.json"),
                   "--fit-max-iters", "1", "--out", str(out)])
        assert rc == 0
        payload = json.loads((out / "calibration.json").read_text())
        assert any(not p["converged"] for p in payload["pores"])
        assert all(p["iterations"] <= 1 for p in payload["pores"])

    def test_interface_free_geometry_fits_nothing(self, cli_dir, capsys):
        out = cli_dir / "cal_none"
        rc = main(["calibrate", "--geometry", str(cli_dir / "series3.json"),
                   "--structured-h", "0.25", "--out", str(out)])
        assert rc == 0
        assert "no pores to fit" in capsys.readouterr().out
        payload = json.loads((out / "calibration.json").read_text())
        assert "note" in payload

    def test_missing_report_path(self, cli_dir):
        rc = main(["calibrate", "--from-report", str(cli_dir / "absent.json"),
                   "--out", str(cli_dir / "cal_miss")])
        assert rc == 2

    def test_needs_geometry_or_report(self, cli_dir):
        rc = main(["calibrate", "--out", str(cli_dir / "cal_bare")])
        assert rc == 2


class TestConfigFile:
    def test_config_supplies_defaults(self, cli_dir):
        cfg = cli_dir / "run.json"
        out = cli_dir / "cfg_out"
        cfg.write_text(json.dumps(
            {"structured_h": 0.25, "out": str(out)}))
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--config", str(cfg)])
        assert rc == 0
        assert (out / "fem_summary.json").exists()

    def test_flags_override_config(self, cli_dir):
        cfg = cli_dir / "run2.json"
        cfg.write_text(json.dumps(
            {"structured_h": 0.5, "out": str(cli_dir / "cfg_losing")}))
        winning = cli_dir / "cfg_winning"
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--config", str(cfg), "--structured-h", "0.25",
                   "--out", str(winning)])
        assert rc == 0
        assert not (cli_dir / "cfg_losing").exists()
        summary = json.loads((winning / "fem_summary.json").read_text())
        assert summary["n_triangles"] == 64  # pitch 0.25, not the file's 0.5

    def test_config_must_be_object(self, cli_dir):
        cfg = cli_dir / "bad.json"
        cfg.write_text(json.dumps([1, 2]))
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--config", str(cfg), "--out", str(cli_dir / "cfg_bad")])
        assert rc == 2

    def test_config_requires_value(self, cli_dir):
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--structured-h", "0.25", "--config"])
        assert rc == 2

    def test_config_given_once(self, cli_dir):
        cfg = cli_dir / "run3.json"
        cfg.write_text("{}")
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--config", str(cfg), "--config", str(cfg)])
        assert rc == 2


class TestInputErrors:
    def test_missing_geometry_file(self, cli_dir):
        rc = main(["solve-fem", "--geometry", str(cli_dir / "absent.json"),
                   "--structured-h", "0.25", "--out", str(cli_dir / "e1")])
        assert rc == 2

    def test_malformed_geometry_json(self, cli_dir):
        bad = cli_dir / "broken.json"
        bad.write_text("{not json")
        rc = main(["solve-fem", "--geometry", str(bad),
                   "--structured-h", "0.25", "--out", str(cli_dir / "e2")])
        assert rc == 2

    def test_incomplete_mesh_files(self, cli_dir):
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--mesh-nodes", "m.node", "--out", str(cli_dir / "e3")])
        assert rc == 2

    def test_two_mesh_sources(self, cli_dir):
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--mesh-nodes", "m.node", "--mesh-eles", "m.ele",
                   "--mesh-edges", "m.edge", "--structured-h", "0.25",
                   "--out", str(cli_dir / "e4")])
        assert rc == 2

    def test_no_mesh_source(self, cli_dir):
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--out", str(cli_dir / "e5")])
        assert rc == 2

    def test_perturb_requires_structured_mesh(self, cli_dir, fixtures_dir):
        base = os.path.join(fixtures_dir, "model-problem")
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--mesh-nodes", base + ".node", "--mesh-eles", base + ".ele",
                   "--mesh-edges", base + ".edge", "--perturb", "0.1",
                   "--out", str(cli_dir / "e6")])
        assert rc == 2

    def test_unalignable_solid_face(self, cli_dir):
        # lattice solids sit on a 0.2 grid; pitch 0.3 cannot tile them
        rc = main(["solve-ddpnm", "--geometry", str(cli_dir / "lattice.json"),
                   "--structured-h", "0.3", "--out", str(cli_dir / "e7")])
        assert rc == 2


class TestSolverFailure:
    def test_unreachable_residual_tolerance(self, cli_dir):
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--structured-h", "0.25", "--tol-solve", "1e-30",
                   "--out", str(cli_dir / "s1")])
        assert rc == 3


class TestParser:
    def test_version_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0

    def test_no_command(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_flag(self, cli_dir):
        with pytest.raises(SystemExit) as exc:
            main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                  "--no-such-flag"])
        assert exc.value.code == 2

    def test_outputs_confined_to_out_dir(self, cli_dir, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        out = cli_dir / "confined"
        rc = main(["solve-fem", "--geometry", str(cli_dir / "channel.json"),
                   "--structured-h", "0.25", "--out", str(out)])
        assert rc == 0
        assert list(tmp_path.iterdir()) == []
