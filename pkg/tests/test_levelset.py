import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deflated_topopt import fem, levelset as lsm, mesh as msh, physics


@pytest.fixture(scope="module")
def square():
    return msh.generate_rect_mesh(1.0, 1.0, 8, 8, msh.tag_all_wall)


# ---------------------------------------------------------------------------
# fluid fractions

def test_fraction_pure_phases(square):
    assert lsm.fluid_fractions(square, -np.ones(square.num_vertices)).min() == 1.0
    assert lsm.fluid_fractions(square, np.ones(square.num_vertices)).max() == 0.0


def test_fraction_single_negative_corner(square):
    values = np.ones(square.num_vertices)
    tri = square.triangles[0]
    values[tri] = [-1.0, 1.0, 1.0]
    ls = lsm.LevelSet(square, values)
    assert ls.fractions[0] == pytest.approx(0.25, abs=1e-14)


def test_fraction_zero_values_count_as_solid(square):
    fr = lsm.fluid_fractions(square, np.zeros(square.num_vertices))
    assert fr.max() == 0.0


def test_fraction_matches_monte_carlo(square):
    rng = np.random.default_rng(11)
    values = rng.normal(size=square.num_vertices)
    ls = lsm.LevelSet(square, values)
    n = 100000
    for e in rng.choice(square.num_triangles, size=4, replace=False):
        tri = square.triangles[e]
        p0, p1, p2 = square.vertices[tri]
        r1 = rng.random(n)
        r2 = rng.random(n)
        flip = r1 + r2 > 1.0
        r1[flip] = 1.0 - r1[flip]
        r2[flip] = 1.0 - r2[flip]
        vals = (values[tri[0]] * (1.0 - r1 - r2) + values[tri[1]] * r1
                + values[tri[2]] * r2)
        estimate = np.mean(vals < 0.0)
        exact = ls.fractions[e]
        sigma = math.sqrt(max(exact * (1.0 - exact), 1e-12) / n)
        assert abs(estimate - exact) <= 3.0 * sigma + 1e-12


def test_volume_consistency(square):
    ls = lsm.LevelSet(square, square.vertices[:, 0] - 0.3)
    assert ls.volume == pytest.approx(0.3, abs=1e-12)


# ---------------------------------------------------------------------------
# volume shifting and projection

def test_shift_examples(square):
    ls = lsm.LevelSet(square, square.vertices[:, 0] - 0.3)
    shifted = lsm.shift_to_volume(ls, 0.5)
    assert shifted.volume == pytest.approx(0.5, abs=1e-4)
    c = shifted.values[0] - ls.values[0]
    assert c == pytest.approx(-0.2, abs=1e-3)

    full = lsm.shift_to_volume(ls, square.total_area)
    assert full.volume == square.total_area
    assert np.all(full.values < 0.0)

    same = lsm.shift_to_volume(ls, ls.volume)
    assert same.volume == pytest.approx(ls.volume, abs=1e-4)


def test_shift_constant_rejected(square):
    ls = lsm.LevelSet(square, np.full(square.num_vertices, 0.25))
    with pytest.raises(lsm.NoBracketError):
        lsm.shift_to_volume(ls, 0.5)


def test_shift_monotone_in_constant(square):
    rng = np.random.default_rng(5)
    values = rng.normal(size=square.num_vertices)
    ls = lsm.LevelSet(square, values)
    vols = [ls.shifted(c).volume for c in np.linspace(-2.0, 2.0, 41)]
    assert all(b <= a + 1e-15 for a, b in zip(vols, vols[1:]))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), target=st.floats(0.05, 0.95))
def test_shift_reaches_random_targets(seed, target):
    mesh = msh.generate_rect_mesh(1.0, 1.0, 6, 6, msh.tag_all_wall)
    rng = np.random.default_rng(seed)
    ls = lsm.LevelSet(mesh, rng.normal(size=mesh.num_vertices))
    shifted = lsm.shift_to_volume(ls, target, tol=1e-4, max_steps=60)
    assert abs(shifted.volume - target) <= 1e-4 * mesh.total_area


def test_project_volume_modes(square):
    ls = lsm.LevelSet(square, square.vertices[:, 0] - 0.4)
    inside = lsm.project_volume(ls, lsm.VolumeConstraint.bounds(0.3, 0.6))
    assert inside is ls  # already feasible

    raised = lsm.project_volume(ls, lsm.VolumeConstraint.bounds(0.5, 0.9))
    assert raised.volume == pytest.approx(0.5, abs=1e-4)

    lowered = lsm.project_volume(ls, lsm.VolumeConstraint.bounds(0.1, 0.2))
    assert lowered.volume == pytest.approx(0.2, abs=1e-4)

    eq = lsm.project_volume(ls, lsm.VolumeConstraint.equality(0.35))
    assert eq.volume == pytest.approx(0.35, abs=1e-4)


def test_project_volume_idempotent(square):
    ls = lsm.LevelSet(square, square.vertices[:, 1] - 0.15)
    con = lsm.VolumeConstraint.bounds(0.4, 0.6)
    once = lsm.project_volume(ls, con)
    twice = lsm.project_volume(once, con)
    assert abs(twice.volume - once.volume) <= 1e-4 * square.total_area


# ---------------------------------------------------------------------------
# sphere geometry

def test_angle_examples(square):
    psi = lsm.LevelSet(square, square.vertices[:, 0] - 0.5).normalized()
    same = fem.ScalarFieldP1(square, 2.0 * psi.values)
    assert lsm.angle(psi, same) == pytest.approx(0.0, abs=1e-7)
    opposite = fem.ScalarFieldP1(square, -psi.values)
    assert lsm.angle(psi, opposite) == pytest.approx(math.pi, abs=1e-7)

    # supports separated by a full element strip are L2-orthogonal
    x = square.vertices[:, 0]
    left = lsm.LevelSet(square, np.where(x <= 0.5, 1.0, 0.0)).normalized()
    right = fem.ScalarFieldP1(square, np.where(x >= 0.75, 1.0, 0.0))
    assert lsm.angle(left, right) == pytest.approx(math.pi / 2.0, abs=1e-12)


def test_sphere_update_kappa_one(square):
    psi = lsm.LevelSet(square, square.vertices[:, 0] - 0.5).normalized()
    g = fem.ScalarFieldP1(square, np.sin(3.0 * square.vertices[:, 1]) + 0.2)
    updated = lsm.sphere_update(psi, g, 1.0)
    gn = fem.l2_norm(g)
    assert np.abs(updated.values - g.values / gn).max() < 1e-12


def test_sphere_update_continuity_at_zero(square):
    psi = lsm.LevelSet(square, square.vertices[:, 0] - 0.5).normalized()
    g = fem.ScalarFieldP1(square, np.cos(2.0 * square.vertices[:, 1]))
    updated = lsm.sphere_update(psi, g, 1e-8)
    assert np.abs(updated.values - psi.values).max() <= 1e-6


def test_sphere_update_orthonormal_midpoint(square):
    x = square.vertices[:, 0]
    psi = lsm.LevelSet(square, np.where(x <= 0.5, 1.0, 0.0)).normalized()
    graw = fem.ScalarFieldP1(square, np.where(x >= 0.75, 1.0, 0.0))
    gn = fem.l2_norm(graw)
    updated = lsm.sphere_update(psi, graw, 0.5)
    expected = (psi.values + graw.values / gn) / math.sqrt(2.0)
    assert np.abs(updated.values - expected).max() < 1e-12
    assert abs(updated.norm() - 1.0) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000),
       kappa=st.floats(1e-6, 1.0))
def test_sphere_update_preserves_norm(seed, kappa):
    mesh = msh.generate_rect_mesh(1.0, 1.0, 5, 5, msh.tag_all_wall)
    rng = np.random.default_rng(seed)
    psi = lsm.LevelSet(mesh, rng.normal(size=mesh.num_vertices)).normalized()
    g = fem.ScalarFieldP1(mesh, rng.normal(size=mesh.num_vertices))
    try:
        updated = lsm.sphere_update(psi, g, kappa)
    except lsm.DegenerateUpdateError:
        return
    assert abs(updated.norm() - 1.0) <= 1e-10


def test_sphere_update_rejects_bad_input(square):
    psi = lsm.LevelSet(square, square.vertices[:, 0] - 0.5)  # not normalized
    g = fem.ScalarFieldP1(square, np.ones(square.num_vertices))
    with pytest.raises(ValueError):
        lsm.sphere_update(psi, g, 0.5)
    normalized = psi.normalized()
    with pytest.raises(lsm.DegenerateUpdateError):
        lsm.sphere_update(normalized, fem.ScalarFieldP1(square, normalized.values), 0.5)


# ---------------------------------------------------------------------------
# optimizer behavior

def test_solve_topopt_stops_immediately_when_aligned():
    # all-fluid dissipation state: the derivative field is nonpositive and
    # the level set negative, so the angle is below ninety degrees
    mesh = msh.generate_rect_mesh(1.5, 1.0, 9, 6, msh.double_pipe_tagger)
    spec = physics.double_pipe_problem(mesh, lsm.VolumeConstraint.free())
    init = lsm.levelset_all_fluid(mesh).normalized()
    ev = lsm.attach_gradient(spec, lsm.evaluate_state(spec, init))
    theta0 = lsm.angle(init, ev.gradient)
    assert theta0 < math.pi / 2.0
    params = lsm.SolverParams(angle_tol=theta0 + 1e-9, max_iters=20)
    result = lsm.solve_topopt(spec, init, params)
    assert result.status == "converged"
    assert result.accepted_steps == 0
    assert len(result.history) == 1


def test_solve_topopt_full_volume_forces_all_fluid():
    mesh = msh.generate_rect_mesh(1.0, 1.0, 8, 8, msh.bipolar_tagger,
                                  pattern="crossed")
    spec = physics.bipolar_problem(
        mesh, lsm.VolumeConstraint.equality(mesh.total_area),
        threshold_speed=0.1, smoothing_dt=1e-3)
    params = lsm.SolverParams(max_iters=6)
    result = lsm.solve_topopt(spec, lsm.levelset_all_fluid(mesh), params)
    # the projection forces the pure fluid phase on every iterate
    for row in result.history:
        assert row.volume == pytest.approx(mesh.total_area, abs=1e-12)
    assert np.all(result.levelset.fractions == 1.0)
    assert result.levelset.volume == mesh.total_area


def test_solve_topopt_monotone_objective_double_pipe():
    mesh = msh.generate_double_pipe_mesh(1.0 / 16.0)
    spec = physics.double_pipe_problem(mesh, lsm.VolumeConstraint.equality(0.5))
    y = mesh.vertices[:, 1]
    init = lsm.LevelSet(mesh, np.minimum(np.abs(y - 0.25), np.abs(y - 0.75))
                        - 1.0 / 12.0)
    params = lsm.SolverParams(max_iters=25)
    result = lsm.solve_topopt(spec, init, params)
    totals = [row.total for row in result.history]
    assert all(b <= a for a, b in zip(totals, totals[1:]))
    assert result.accepted_steps >= 1
    for row in result.history:
        assert abs(row.volume - 0.5) <= 1e-4 * mesh.total_area


# ---------------------------------------------------------------------------
# optimality checker

def _checker_setup():
    mesh = msh.generate_rect_mesh(1.0, 1.0, 8, 8, msh.tag_all_wall)
    ls = lsm.LevelSet(mesh, mesh.vertices[:, 0] - 0.5)  # left half fluid
    inside = ls.nodal_fluid()
    return mesh, ls, inside


def field(mesh, values):
    return fem.ScalarFieldP1(mesh, values)


def test_checker_interior_cases():
    mesh, ls, inside = _checker_setup()
    con = lsm.VolumeConstraint.bounds(0.2, 0.8)
    good = np.where(inside, -1.0, 1.0)
    rep = lsm.check_optimality(ls, field(mesh, good), con, tol=1e-9)
    assert rep.case == "interior_volume" and rep.passed

    bad = -np.ones(mesh.num_vertices)
    rep = lsm.check_optimality(ls, field(mesh, bad), con, tol=1e-9)
    assert rep.case == "interior_volume" and not rep.passed
    outside_fail = [c for c in rep.checks if c.name == "outside_nonnegative"][0]
    assert outside_fail.violation_area_fraction == pytest.approx(0.5, abs=0.1)
    assert outside_fail.worst_margin == pytest.approx(1.0)


def test_checker_lower_bound_cases():
    mesh, ls, inside = _checker_setup()
    con = lsm.VolumeConstraint.bounds(0.5, 0.8)
    # exchanging material must not pay: inside values below every outside one
    good = np.where(inside, 0.1, 0.2)
    rep = lsm.check_optimality(ls, field(mesh, good), con, tol=1e-9)
    assert rep.case == "at_lower_bound" and rep.passed

    bad = np.where(inside, 0.5, 0.2)  # inside exceeds inf outside
    rep = lsm.check_optimality(ls, field(mesh, bad), con, tol=1e-9)
    assert rep.case == "at_lower_bound" and not rep.passed


def test_checker_upper_bound_cases():
    mesh, ls, inside = _checker_setup()
    con = lsm.VolumeConstraint.bounds(0.2, 0.5)
    good = np.where(inside, -0.3, -0.1)  # outside above sup inside
    rep = lsm.check_optimality(ls, field(mesh, good), con, tol=1e-9)
    assert rep.case == "at_upper_bound" and rep.passed

    bad = np.where(inside, -0.3, -0.5)
    rep = lsm.check_optimality(ls, field(mesh, bad), con, tol=1e-9)
    assert rep.case == "at_upper_bound" and not rep.passed


def test_checker_equality_alignment():
    mesh, ls, inside = _checker_setup()
    con = lsm.VolumeConstraint.equality(0.5)
    aligned = field(mesh, 3.0 * ls.values)
    rep = lsm.check_optimality(ls, aligned, con, tol=1e-9)
    assert rep.case == "volume_equality" and rep.passed
