"""Batch front end: run a configured single-solve or deflation job and
write all artifacts (manifest, per-round histories, minimizer fields)."""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from . import deflation, fem, levelset as lsm, mesh as msh, physics, toy, vtkio

ENV_OUTPUT_DIR = "DEFLATED_TOPOPT_OUT"


def build_mesh(cfg):
    if cfg.mesh_kind == "double_pipe":
        if cfg.holes_as_solid:
            nx = max(2, round(msh.DOUBLE_PIPE_WIDTH / cfg.resolution))
            ny = max(2, round(msh.DOUBLE_PIPE_HEIGHT / cfg.resolution))
            return msh.generate_rect_mesh(msh.DOUBLE_PIPE_WIDTH,
                                          msh.DOUBLE_PIPE_HEIGHT,
                                          nx, ny, msh.double_pipe_tagger)
        return msh.generate_double_pipe_mesh(cfg.resolution, cfg.hole_segments)
    if cfg.mesh_kind == "rectangle":
        tagger = msh.TAGGERS.get(cfg.rect_tagger)
        if tagger is None:
            raise cfgmod.ConfigError(f"unknown tagger {cfg.rect_tagger!r}")
        return msh.generate_rect_mesh(cfg.rect_width, cfg.rect_height,
                                      cfg.rect_nx, cfg.rect_ny, tagger,
                                      cfg.rect_pattern)
    raise cfgmod.ConfigError(f"unknown mesh kind {cfg.mesh_kind!r}")


def build_volume_constraint(cfg):
    if cfg.volume_mode == "equality":
        return lsm.VolumeConstraint.equality(cfg.volume_target)
    if cfg.volume_mode == "bounds":
        return lsm.VolumeConstraint.bounds(cfg.volume_lower, cfg.volume_upper)
    return lsm.VolumeConstraint.free()


def build_problem(cfg, mesh):
    volume = build_volume_constraint(cfg)
    frozen = None
    if cfg.problem == "double_pipe":
        if cfg.holes_as_solid and cfg.mesh_kind == "double_pipe":
            frozen = msh.double_pipe_hole_mask(mesh)
        return physics.double_pipe_problem(
            mesh, volume, cfg.alpha_fluid, cfg.alpha_solid, frozen_solid=frozen)
    if cfg.problem == "bipolar_plate":
        return physics.bipolar_problem(
            mesh, volume, cfg.threshold_speed, cfg.smoothing_dt,
            cfg.alpha_fluid, cfg.alpha_solid)
    raise cfgmod.ConfigError(f"unknown problem {cfg.problem!r}")


def build_init(cfg, mesh):
    descriptor = cfg.init
    if descriptor == "all-fluid":
        return lsm.levelset_all_fluid(mesh)
    if descriptor.startswith("stripes:"):
        return lsm.levelset_vertical_stripes(mesh, int(descriptor.split(":", 1)[1]))
    if descriptor.startswith("file:"):
        return load_seed_levelset(descriptor.split(":", 1)[1], mesh)
    raise cfgmod.ConfigError(f"unknown init descriptor {descriptor!r}")


def load_seed_levelset(path, mesh):
    try:
        data = vtkio.read_vtk(path)
    except OSError as exc:
        raise cfgmod.ConfigError(f"cannot read init file {path!r}: {exc}") from exc
    psi = data.point_scalars.get("psi")
    if psi is None:
        raise cfgmod.ConfigError(f"init file {path!r} has no 'psi' point data")
    if psi.shape[0] != mesh.num_vertices:
        raise cfgmod.ConfigError(
            f"init field has {psi.shape[0]} values, mesh has {mesh.num_vertices}")
    return lsm.LevelSet(mesh, psi)


def solver_params(cfg):
    return lsm.SolverParams(angle_tol=math.radians(cfg.angle_tol_deg),
                            kappa_min=cfg.kappa_min,
                            max_iters=cfg.max_iters,
                            volume_tol=cfg.volume_tol)


def penalty_params(cfg):
    return deflation.PenaltyParams(cfg.gamma, cfg.delta, cfg.tau_same)


def _write_round_csv(path, rows, phase_rows=()):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("phase",) + lsm.HistoryRow.HEADER)
        for phase, history in (("main", rows),) + tuple(phase_rows):
            for row in history:
                writer.writerow((phase,) + row.astuple())


def write_pde_artifacts(cfg, spec, state, outdir):
    os.makedirs(outdir, exist_ok=True)
    rounds_by_index = {}
    for record in state.rounds:
        rounds_by_index.setdefault(record.round_index, []).append(record)
    for index, records in rounds_by_index.items():
        main = next((r for r in records if r.kind != "restart"), None)
        restarts = [("restart", r.history) for r in records if r.kind == "restart"]
        _write_round_csv(os.path.join(outdir, f"round_{index}.csv"),
                         main.history if main else [], restarts)

    manifest_path = os.path.join(outdir, "manifest.csv")
    with open(manifest_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("index", "objective", "constraint_gap_percent",
                         "volume", "found_at_iteration", "via_restart", "vtk"))
        for i, snap in enumerate(state.solutions, start=1):
            vtk_name = f"minimizer_{i}.vtk"
            export_minimizer(spec, snap, os.path.join(outdir, vtk_name))
            ls = snap.levelset()
            gap = "" if snap.constraint_gap is None else repr(snap.constraint_gap)
            writer.writerow((i, repr(snap.objective), gap, repr(ls.volume),
                             snap.round_found, snap.via_restart, vtk_name))
    return manifest_path


def export_minimizer(spec, snap, path):
    """Re-solve the states on the stored shape and write the nodal fields."""
    ls = snap.levelset()
    ev = lsm.attach_gradient(spec, lsm.evaluate_state(spec, ls))
    chi = ls.nodal_fluid().astype(float)
    scalars = {"psi": ls.values, "chi": chi, "p": ev.flow.p.values,
               "dJ": ev.gradient.values}
    if spec.kind == physics.BIPOLAR:
        us = ev.smoothed.u_s.at_vertices()
        scalars["u_s_norm"] = np.hypot(us[:, 0], us[:, 1])
    vectors = {"u": ev.flow.u.at_vertices()}
    vtkio.write_vtk(path, spec.mesh, scalars, vectors)


def write_toy_artifacts(cfg, state, outdir):
    manifest_path = os.path.join(outdir, "manifest.csv")
    with open(manifest_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("round", "kind", "x", "objective", "via_restart", "added"))
        for rec in state.rounds:
            writer.writerow((rec.round_index, rec.kind, repr(rec.x),
                             repr(rec.objective), rec.via_restart, rec.added))
    return manifest_path


def run(cfg: cfgmod.RunConfig) -> int:
    cfg.validate()
    outdir = cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    cfgmod.write_config(cfg, os.path.join(outdir, "effective_config.txt"))

    if cfg.problem == "rastrigin":
        problem = toy.rastrigin_problem(cfg.toy_lower, cfg.toy_upper)
        state = toy.deflate_scalar(problem, cfg.toy_start, penalty_params(cfg),
                                   cfg.budget, step=cfg.toy_step)
        write_toy_artifacts(cfg, state, outdir)
        found = len(state.minimizers)
        print(f"found {found} minimizers in {len(state.rounds)} solves; "
              f"artifacts in {outdir}")
        return 0 if found else 1

    mesh = build_mesh(cfg)
    spec = build_problem(cfg, mesh)
    init = build_init(cfg, mesh)
    state = deflation.deflate(spec, init, solver_params(cfg),
                              penalty_params(cfg), cfg.budget)
    write_pde_artifacts(cfg, spec, state, outdir)
    found = len(state.solutions)
    failures = sum(1 for r in state.rounds if r.error)
    print(f"found {found} minimizers in {len(state.rounds)} solves "
          f"({state.restarts} restarts, {failures} failed rounds); "
          f"artifacts in {outdir}")
    return 0 if found else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="deflated-topopt",
        description="Find multiple local minimizers of fluid topology "
                    "optimization problems by deflation.")
    parser.add_argument("--config", help="path to an INI run configuration")
    parser.add_argument("--preset", help="named preset: " + ", ".join(cfgmod.PRESETS))
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--max-rounds", type=int,
                        help="override the deflation solve budget")
    parser.add_argument("--seed-init", metavar="VTK",
                        help="seed the initial level set from a VTK file "
                             "with 'psi' point data")
    args = parser.parse_args(argv)

    try:
        if args.config:
            cfg = cfgmod.load_config(args.config)
        elif args.preset:
            cfg = cfgmod.preset(args.preset)
        else:
            parser.error("one of --config or --preset is required")
        if args.out:
            cfg.output_dir = args.out
        elif os.environ.get(ENV_OUTPUT_DIR):
            cfg.output_dir = os.environ[ENV_OUTPUT_DIR]
        if args.max_rounds is not None:
            cfg.budget = args.max_rounds
        if args.seed_init:
            cfg.init = f"file:{args.seed_init}"
        cfg.validate()
    except (cfgmod.ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    try:
        return run(cfg)
    except (fem.SolveError, fem.AssemblyError, msh.MeshError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
