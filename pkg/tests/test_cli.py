import csv
import math
import os

import numpy as np
import pytest

from deflated_topopt import cli, config as cfgmod, vtkio


def test_config_round_trip_all_presets():
    for name in cfgmod.PRESETS:
        cfg = cfgmod.preset(name)
        text = cfgmod.config_to_text(cfg)
        assert cfgmod.config_from_text(text) == cfg


def test_config_round_trip_via_file(tmp_path):
    cfg = cfgmod.preset("double-pipe-desk")
    cfg.resolution = 1.0 / 17.0
    cfg.tau_same = 0.123
    path = tmp_path / "run.ini"
    cfgmod.write_config(cfg, path)
    assert cfgmod.load_config(path) == cfg


def test_config_rejects_bad_input():
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.config_from_text("[problem]\nproblem = warp_drive\n")
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.config_from_text("[problem]\nnonsense_option = 3\n")
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.preset("no-such-preset")


def test_rastrigin_preset_run(tmp_path):
    out = tmp_path / "toy"
    code = cli.main(["--preset", "rastrigin-demo", "--out", str(out)])
    assert code == 0
    assert (out / "effective_config.txt").exists()
    with open(out / "manifest.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) >= 10
    added = [r for r in rows if r["added"] == "True"]
    assert len(added) >= 5
    # effective config reparses to the same configuration
    effective = cfgmod.load_config(out / "effective_config.txt")
    assert effective.problem == "rastrigin"
    assert effective.output_dir == str(out)


def test_max_rounds_and_seed_init_overrides(tmp_path):
    out = tmp_path / "toy2"
    code = cli.main(["--preset", "rastrigin-demo", "--out", str(out),
                     "--max-rounds", "2"])
    assert code == 0
    with open(out / "manifest.csv") as f:
        rows = list(csv.DictReader(f))
    assert len([r for r in rows if r["kind"] != "restart"]) == 2


def test_unknown_preset_is_config_error(capsys):
    assert cli.main(["--preset", "bogus"]) == 2
    assert "configuration error" in capsys.readouterr().err


def _tiny_pde_config(tmp_path, out_name):
    cfg = cfgmod.RunConfig(
        problem="bipolar_plate", mesh_kind="rectangle",
        rect_nx=8, rect_ny=8, rect_pattern="crossed", rect_tagger="bipolar",
        volume_mode="bounds", volume_target=None,
        volume_lower=0.5, volume_upper=0.7,
        threshold_speed=0.1, smoothing_dt=5e-5,
        gamma=0.25, delta=5e-3, budget=2, max_iters=8,
        angle_tol_deg=1.0, init="stripes:2",
        output_dir=str(tmp_path / out_name))
    return cfg.validate()


def test_pde_run_artifacts(tmp_path):
    cfg = _tiny_pde_config(tmp_path, "pde")
    code = cli.run(cfg)
    assert code == 0
    out = cfg.output_dir
    assert os.path.exists(os.path.join(out, "effective_config.txt"))
    assert os.path.exists(os.path.join(out, "round_1.csv"))
    assert os.path.exists(os.path.join(out, "round_2.csv"))

    with open(os.path.join(out, "manifest.csv")) as f:
        rows = list(csv.DictReader(f))
    assert rows
    for row in rows:
        vtk_path = os.path.join(out, row["vtk"])
        assert os.path.exists(vtk_path)
        data = vtkio.read_vtk(vtk_path)
        for name in ("psi", "chi", "p", "u_s_norm"):
            assert name in data.point_scalars
        assert "u" in data.point_vectors
        assert float(row["objective"]) >= 0.0
        assert row["constraint_gap_percent"] != ""

    with open(os.path.join(out, "round_1.csv")) as f:
        hist = list(csv.DictReader(f))
    assert hist
    totals = [float(r["J_total"]) for r in hist if r["phase"] == "main"]
    assert all(b <= a for a, b in zip(totals, totals[1:]))


def test_seed_init_from_vtk(tmp_path):
    cfg = _tiny_pde_config(tmp_path, "seed_src")
    assert cli.run(cfg) == 0
    with open(os.path.join(cfg.output_dir, "manifest.csv")) as f:
        first = next(csv.DictReader(f))
    seed = os.path.join(cfg.output_dir, first["vtk"])

    cfg2 = _tiny_pde_config(tmp_path, "seed_dst")
    cfg2.budget = 1
    cfg2.init = f"file:{seed}"
    assert cli.run(cfg2) == 0
    with open(os.path.join(cfg2.output_dir, "manifest.csv")) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1


def test_holes_as_solid_mode(tmp_path):
    import numpy as np

    cfg = cfgmod.preset("double-pipe-desk")
    cfg.holes_as_solid = True
    cfg.resolution = 1.0 / 12.0
    mesh = cli.build_mesh(cfg)
    # plain rectangle, no hole boundaries
    assert mesh.total_area == pytest.approx(1.5, rel=1e-12)
    spec = cli.build_problem(cfg, mesh)
    assert spec.frozen_solid is not None and spec.frozen_solid.any()
    alpha = np.full(mesh.num_triangles, spec.alpha_fluid)
    effective = spec.effective_alpha(alpha)
    assert np.all(effective[spec.frozen_solid] == spec.alpha_solid)
    assert np.all(effective[~spec.frozen_solid] == spec.alpha_fluid)


def test_output_dir_env_override(tmp_path, monkeypatch):
    out = tmp_path / "env_out"
    monkeypatch.setenv(cli.ENV_OUTPUT_DIR, str(out))
    code = cli.main(["--preset", "rastrigin-demo", "--max-rounds", "1"])
    assert code == 0
    assert (out / "manifest.csv").exists()
