"""Level-set shape representation and the sphere-update optimizer.

A shape is the set where a nodal P1 field is negative.  Per-element fluid
fractions are exact for the linear interpolant, the volume constraint is
enforced by shifting the field with a bisection-determined constant, and
the optimizer combines the field with the generalized topological
derivative on the unit L2 sphere, with a backtracking line search on the
step angle and projection to the feasible volume inside the search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fem, physics
from .mesh import Mesh

TopDerivField = fem.ScalarFieldP1


class DegenerateUpdateError(RuntimeError):
    """Update requested with a vanishing angle; the caller should have
    stopped at the convergence test."""


class NoBracketError(ValueError):
    """A constant level-set field cannot be shifted to a target volume."""


class BisectionError(RuntimeError):
    """Volume bisection failed to converge within the step budget."""


@dataclass(frozen=True)
class VolumeConstraint:
    """Equality target or inequality bounds on the fluid area."""

    lower: Optional[float] = None
    upper: Optional[float] = None
    target: Optional[float] = None

    @classmethod
    def equality(cls, target):
        return cls(target=target)

    @classmethod
    def bounds(cls, lower, upper):
        if lower > upper:
            raise ValueError("lower volume bound exceeds the upper bound")
        return cls(lower=lower, upper=upper)

    @classmethod
    def free(cls):
        return cls()

    def validate(self, total_area):
        for v in (self.lower, self.upper, self.target):
            if v is not None and not (0.0 <= v <= total_area + 1e-12):
                raise ValueError(f"volume value {v} outside [0, {total_area}]")


@dataclass(eq=False)
class LevelSet:
    """Nodal level-set field; the fluid region is where it is negative.

    Element fluid fractions are the exact area fractions of the negative
    set of the linear interpolant; nodes with value zero count as
    non-fluid (measure-zero convention)."""

    mesh: Mesh
    values: np.ndarray
    fractions: np.ndarray = field(init=False)
    volume: float = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).copy()
        if self.values.shape != (self.mesh.num_vertices,):
            raise ValueError("one nodal value per vertex required")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("level-set values must be finite")
        self.values.setflags(write=False)
        self.fractions = fluid_fractions(self.mesh, self.values)
        self.fractions.setflags(write=False)
        self.volume = float(self.mesh.element_areas @ self.fractions)

    def field(self) -> fem.ScalarFieldP1:
        return fem.ScalarFieldP1(self.mesh, self.values)

    def norm(self) -> float:
        return fem.l2_norm(self.field())

    def normalized(self) -> "LevelSet":
        n = self.norm()
        if n <= 0.0:
            raise ValueError("cannot normalize a zero level-set field")
        return LevelSet(self.mesh, self.values / n)

    def shifted(self, c) -> "LevelSet":
        return LevelSet(self.mesh, self.values + c)

    def nodal_fluid(self) -> np.ndarray:
        return self.values < 0.0


def fluid_fractions(mesh: Mesh, values) -> np.ndarray:
    """Exact per-element area fraction of the negative set of the linear
    interpolant, by cutting each triangle along its zero level."""
    v = np.asarray(values, dtype=float)[mesh.triangles]  # (nt, 3)
    neg = v < 0.0
    count = neg.sum(axis=1)
    frac = np.zeros(mesh.num_triangles)
    frac[count == 3] = 1.0

    one = np.where(count == 1)[0]
    if one.size:
        rows = v[one]
        ia = np.argmax(neg[one], axis=1)
        va = rows[np.arange(one.size), ia]
        others = np.array([[1, 2], [2, 0], [0, 1]])[ia]
        vb = rows[np.arange(one.size)[:, None], others]
        frac[one] = va ** 2 / ((va - vb[:, 0]) * (va - vb[:, 1]))

    two = np.where(count == 2)[0]
    if two.size:
        rows = v[two]
        ic = np.argmin(neg[two], axis=1)
        vc = rows[np.arange(two.size), ic]
        others = np.array([[1, 2], [2, 0], [0, 1]])[ic]
        vb = rows[np.arange(two.size)[:, None], others]
        frac[two] = 1.0 - vc ** 2 / ((vc - vb[:, 0]) * (vc - vb[:, 1]))
    return frac


def fluid_fraction(ls: LevelSet, element: int) -> float:
    """Fluid fraction of one element."""
    return float(ls.fractions[element])


def drag_field(ls: LevelSet, alpha_fluid, alpha_solid) -> np.ndarray:
    """Per-element drag: fraction-weighted mean of the phase coefficients,
    so pure phases get exactly the phase value."""
    f = ls.fractions
    return alpha_fluid * f + alpha_solid * (1.0 - f)


# ---------------------------------------------------------------------------
# volume projection

def shift_to_volume(ls: LevelSet, target, tol=1e-4, max_steps=100) -> LevelSet:
    """Shift the field by a constant so the fluid volume hits the target
    within tol * |D|, via bisection on the shift."""
    area = ls.mesh.total_area
    if not (-1e-12 <= target <= area * (1.0 + 1e-12)):
        raise ValueError(f"target volume {target} outside [0, {area}]")
    vmin, vmax = float(ls.values.min()), float(ls.values.max())
    if vmax == vmin:
        raise NoBracketError("constant level-set field has no volume bracket")

    tol_abs = tol * area
    spread = vmax - vmin
    # edge targets snap to exactly pure phases
    margin = max(1e-12, 1e-9 * spread)
    if target >= area - tol_abs:
        return ls.shifted(-(vmax + margin))
    if target <= tol_abs:
        return ls.shifted(-vmin + margin)

    hi = max(-vmin, 0.0)          # fully solid end
    lo = min(-vmax, 0.0)          # fully fluid end (may need widening on plateaus)
    guard = 0
    while ls.shifted(lo).volume < target - tol_abs:
        lo -= spread + 1.0
        guard += 1
        if guard > 4:
            raise BisectionError("could not bracket the target volume")

    for _ in range(max_steps):
        c = 0.5 * (lo + hi)
        shifted = ls.shifted(c)
        vol = shifted.volume
        if abs(vol - target) <= tol_abs:
            return shifted
        if vol > target:
            lo = c
        else:
            hi = c
    raise BisectionError(
        f"volume bisection did not reach |vol - target| <= {tol_abs:.3e} "
        f"in {max_steps} steps")


def project_volume(ls: LevelSet, constraint: VolumeConstraint, tol=1e-4,
                   max_steps=100) -> LevelSet:
    """Shift onto the nearest feasible volume; identity when already
    feasible (inequality mode).  Equality mode always shifts."""
    constraint.validate(ls.mesh.total_area)
    if constraint.target is not None:
        return shift_to_volume(ls, constraint.target, tol, max_steps)
    if constraint.lower is not None and ls.volume < constraint.lower:
        return shift_to_volume(ls, constraint.lower, tol, max_steps)
    if constraint.upper is not None and ls.volume > constraint.upper:
        return shift_to_volume(ls, constraint.upper, tol, max_steps)
    return ls


# ---------------------------------------------------------------------------
# sphere geometry

def angle(ls: LevelSet, g: TopDerivField) -> float:
    """L2 angle between the level-set field and the derivative field."""
    psi = ls.field()
    npsi = fem.l2_norm(psi)
    ng = fem.l2_norm(g)
    if npsi <= 0.0 or ng <= 0.0:
        raise ValueError("angle undefined for zero-norm fields")
    cosine = fem.l2_inner(psi, g) / (npsi * ng)
    return float(math.acos(min(1.0, max(-1.0, cosine))))


def sphere_update(ls: LevelSet, g: TopDerivField, kappa) -> LevelSet:
    """Rotate the unit-norm field towards the normalized derivative field
    by the fraction kappa of their angle; the result stays on the sphere."""
    if not 0.0 < kappa <= 1.0:
        raise ValueError("step fraction must lie in (0, 1]")
    if abs(ls.norm() - 1.0) > 1e-8:
        raise ValueError("sphere update requires a unit-norm level-set field")
    theta = angle(ls, g)
    if theta < 1e-12:
        raise DegenerateUpdateError("angle below 1e-12; iteration should stop")
    ng = fem.l2_norm(g)
    new = (math.sin((1.0 - kappa) * theta) * ls.values
           + math.sin(kappa * theta) * g.values / ng) / math.sin(theta)
    return LevelSet(ls.mesh, new)


# ---------------------------------------------------------------------------
# optimizer

@dataclass(frozen=True)
class SolverParams:
    angle_tol: float = math.radians(2.0)
    kappa_min: float = 1e-3
    max_iters: int = 500
    volume_tol: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.angle_tol < math.pi / 2.0:
            raise ValueError("angle tolerance must lie in (0, pi/2)")
        if not 0.0 < self.kappa_min <= 1.0:
            raise ValueError("line-search floor must lie in (0, 1]")


@dataclass
class HistoryRow:
    iteration: int
    objective: float
    penalty: float
    total: float
    theta: float
    volume: float
    kappa: float  # accepted step from this iterate; nan on the final row

    HEADER = ("iter", "J", "penalty", "J_total", "theta_rad", "volume", "kappa")

    def astuple(self):
        return (self.iteration, self.objective, self.penalty, self.total,
                self.theta, self.volume, self.kappa)


@dataclass(eq=False)
class Evaluation:
    levelset: LevelSet
    flow: physics.FlowState
    smoothed: Optional[physics.SmoothedState]
    objective: float
    penalty: float
    adjoint: Optional[physics.AdjointState] = None
    gradient: Optional[TopDerivField] = None

    @property
    def total(self):
        return self.objective + self.penalty


@dataclass(eq=False)
class TopOptResult:
    levelset: LevelSet
    history: list
    status: str
    evaluation: Evaluation

    @property
    def converged(self):
        return self.status == "converged"

    @property
    def accepted_steps(self):
        return sum(1 for row in self.history if not math.isnan(row.kappa))


def evaluate_state(spec, ls, extra=None) -> Evaluation:
    alpha = drag_field(ls, spec.alpha_fluid, spec.alpha_solid)
    flow = physics.solve_flow(spec, alpha)
    smoothed = None
    if spec.kind == physics.BIPOLAR:
        smoothed = physics.smooth_velocity(spec, flow)
    obj = physics.objective(spec, flow, smoothed)
    pen = float(extra.value(ls)) if extra is not None else 0.0
    return Evaluation(ls, flow, smoothed, obj, pen)


def attach_gradient(spec, ev: Evaluation, extra=None) -> Evaluation:
    smoothed = ev.smoothed
    if spec.kind == physics.BIPOLAR:
        smoothed = physics.smoothing_adjoint(spec, smoothed)
        ev.smoothed = smoothed
    ev.adjoint = physics.solve_adjoint(spec, ev.flow, smoothed)
    g = physics.top_derivative(spec, ev.flow, ev.adjoint)
    if extra is not None:
        g = fem.ScalarFieldP1(spec.mesh, g.values + extra.derivative_values(ev.levelset))
    ev.gradient = g
    return ev


def solve_topopt(spec, init: LevelSet, params: SolverParams,
                 extra=None) -> TopOptResult:
    """Sphere-update iteration with volume projection and backtracking.

    Each iterate is projected onto the feasible volume and renormalized
    before evaluation, so the recorded history rows are always feasible;
    the line search accepts the first step fraction whose projected trial
    does not increase objective + penalty.  Stops when the angle between
    the field and the (penalized) derivative drops below the tolerance,
    when the line search stalls below its floor, or at the iteration cap.
    """
    constraint = spec.volume
    # project far inside the feasibility tolerance so that volume jitter
    # between line-search trials cannot mask genuine objective decrease
    tol = 1e-3 * params.volume_tol

    def feasible(ls):
        ls = project_volume(ls, constraint, tol)
        return ls.normalized()

    ls = feasible(init.normalized())
    ev = attach_gradient(spec, evaluate_state(spec, ls, extra), extra)

    history = []
    status = "max_iterations"
    for it in range(params.max_iters):
        # a vanishing derivative (e.g. the objective hit its global floor)
        # satisfies the optimality condition trivially
        theta = 0.0 if fem.l2_norm(ev.gradient) == 0.0 else angle(ls, ev.gradient)
        row = HistoryRow(it, ev.objective, ev.penalty, ev.total, theta,
                         ls.volume, math.nan)
        if theta <= params.angle_tol:
            history.append(row)
            status = "converged"
            break

        kappa = 1.0
        accepted = None
        while kappa >= params.kappa_min * (1.0 - 1e-12):
            try:
                trial = feasible(sphere_update(ls, ev.gradient, kappa))
            except (NoBracketError, BisectionError):
                # e.g. a full step onto a constant derivative field cannot
                # be projected; shorter steps mix in the current iterate
                kappa *= 0.5
                continue
            trial_ev = evaluate_state(spec, trial, extra)
            if trial_ev.total <= ev.total:
                accepted = (kappa, trial, trial_ev)
                break
            kappa *= 0.5

        if accepted is None:
            history.append(row)
            status = "stalled"
            break

        row.kappa = kappa
        history.append(row)
        kappa, ls, ev = accepted
        ev = attach_gradient(spec, ev, extra)
    else:
        theta = 0.0 if fem.l2_norm(ev.gradient) == 0.0 else angle(ls, ev.gradient)
        history.append(HistoryRow(params.max_iters, ev.objective, ev.penalty,
                                  ev.total, theta, ls.volume, math.nan))

    return TopOptResult(ls, history, status, ev)


# ---------------------------------------------------------------------------
# optimality diagnostics

@dataclass(frozen=True)
class ConditionCheck:
    name: str
    violation_area_fraction: float
    worst_margin: float

    @property
    def passed(self):
        return self.violation_area_fraction == 0.0


@dataclass(frozen=True)
class OptimalityReport:
    case: str
    checks: tuple

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


def _lumped_vertex_areas(mesh):
    cached = mesh._cache.get("lumped_areas")
    if cached is None:
        cached = np.bincount(mesh.triangles.ravel(),
                             weights=np.repeat(mesh.element_areas / 3.0, 3),
                             minlength=mesh.num_vertices)
        mesh._cache["lumped_areas"] = cached
    return cached

def check_optimality(ls: LevelSet, g: TopDerivField,
                     constraint: VolumeConstraint, tol=1e-8,
                     volume_tol=1e-4) -> OptimalityReport:
    """Classify the iterate against the sign conditions of the constrained
    necessary optimality criterion.

    Inequality mode picks the applicable case from the current volume
    (at the lower bound / interior / at the upper bound, within
    volume_tol * |D|); equality mode couples both phases through their
    extreme values.  Violation measures use lumped vertex areas.
    """
    mesh = ls.mesh
    vals = g.values
    inside = ls.nodal_fluid()
    outside = ~inside
    lumped = _lumped_vertex_areas(mesh)
    area = mesh.total_area
    vtol = volume_tol * area

    inf_outside = vals[outside].min() if outside.any() else math.inf
    sup_inside = vals[inside].max() if inside.any() else -math.inf

    def check(name, mask, bad, margin):
        viol = mask & bad
        frac = float(lumped[viol].sum() / area)
        worst = float(np.max(np.abs(margin[viol]))) if viol.any() else 0.0
        return ConditionCheck(name, frac, worst)

    def outside_nonneg():
        return check("outside_nonnegative", outside, vals < -tol, vals)

    def inside_nonpos():
        return check("inside_nonpositive", inside, vals > tol, vals)

    def outside_above_sup():
        return check("outside_at_least_sup_inside", outside,
                     vals < sup_inside - tol, vals - sup_inside)

    def inside_below_inf():
        return check("inside_at_most_inf_outside", inside,
                     vals > inf_outside + tol, vals - inf_outside)

    if constraint.target is not None:
        case = "volume_equality"
        checks = (outside_above_sup(), inside_below_inf())
    elif constraint.lower is not None and abs(ls.volume - constraint.lower) <= vtol:
        case = "at_lower_bound"
        checks = (outside_nonneg(), inside_below_inf())
    elif constraint.upper is not None and abs(ls.volume - constraint.upper) <= vtol:
        case = "at_upper_bound"
        checks = (outside_above_sup(), inside_nonpos())
    else:
        case = "interior_volume"
        checks = (outside_nonneg(), inside_nonpos())

    return OptimalityReport(case, checks)


# ---------------------------------------------------------------------------
# initial level sets

def levelset_all_fluid(mesh) -> LevelSet:
    """Strictly negative but non-constant, so volume shifts stay possible;
    most negative in the domain center."""
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    w = x.max() - x.min()
    h = y.max() - y.min()
    interior = np.minimum(np.minimum(x - x.min(), x.min() + w - x),
                          np.minimum(y - y.min(), y.min() + h - y))
    return LevelSet(mesh, -interior - 0.05 * min(w, h))


def levelset_vertical_stripes(mesh, count) -> LevelSet:
    """count vertical fluid stripes across the domain width."""
    if count < 1:
        raise ValueError("stripe count must be at least 1")
    x = mesh.vertices[:, 0]
    w = x.max() - x.min()
    return LevelSet(mesh, np.cos(2.0 * math.pi * count * (x - x.min()) / w))
