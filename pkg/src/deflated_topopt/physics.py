"""Problem definitions for the two benchmarks.

double_pipe: energy-dissipation minimization of Dirichlet-driven flow
through the 1.5 x 1.0 domain with five holes, equality volume target.

bipolar_plate: uniform-flow objective on the unit square.  The flow enters
through a band on the left, leaves through a natural-outflow band on the
right, gets smoothed by one implicit heat step, and the objective penalizes
smoothed speeds below a threshold (Moreau-Yosida form).

Both problems share the generalized Stokes state system with per-element
drag coefficients; sensitivities come from the adjoint chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fem
from .mesh import BoundaryTag, Mesh

DOUBLE_PIPE = "double_pipe"
BIPOLAR = "bipolar_plate"

# benchmark inverse permeabilities
ALPHA_FLUID_DEFAULT = 2.5 / 100.0 ** 2
ALPHA_SOLID_DEFAULT = 2.5 / 0.0025 ** 2


def double_pipe_profile(x, y):
    """Parabolic in/outflow on the bands y in [1/6, 2/6] and [4/6, 5/6]."""
    if 1.0 / 6.0 <= y <= 2.0 / 6.0:
        return (-144.0 * (y - 1.0 / 6.0) * (y - 2.0 / 6.0), 0.0)
    if 4.0 / 6.0 <= y <= 5.0 / 6.0:
        return (-144.0 * (y - 4.0 / 6.0) * (y - 5.0 / 6.0), 0.0)
    return (0.0, 0.0)


def bipolar_inflow_profile(x, y):
    """Parabolic inflow on the band y in [0.35, 0.65]."""
    if 0.35 <= y <= 0.65:
        return (-400.0 / 9.0 * (y - 0.35) * (y - 0.65), 0.0)
    return (0.0, 0.0)


def _zero_velocity(x, y):
    return (0.0, 0.0)


@dataclass(eq=False)
class ProblemSpec:
    """One topology-optimization problem instance.

    volume is a VolumeConstraint (equality or bounds, see the optimizer
    module); threshold_speed and smoothing_dt apply to the bipolar problem
    only.  frozen_solid optionally pins elements to the solid phase
    regardless of the level set (used when the five holes are kept in the
    mesh as high-drag regions instead of being removed).
    """

    kind: str
    mesh: Mesh
    volume: object
    alpha_fluid: float = ALPHA_FLUID_DEFAULT
    alpha_solid: float = ALPHA_SOLID_DEFAULT
    threshold_speed: Optional[float] = None
    smoothing_dt: Optional[float] = None
    frozen_solid: Optional[np.ndarray] = None
    _ctx: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in (DOUBLE_PIPE, BIPOLAR):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if not (0.0 < self.alpha_fluid < self.alpha_solid):
            raise ValueError("drag coefficients must satisfy 0 < fluid < solid")
        if self.kind == BIPOLAR:
            if not (self.threshold_speed and self.threshold_speed > 0.0):
                raise ValueError("bipolar problem needs a positive threshold speed")
            if not (self.smoothing_dt and self.smoothing_dt > 0.0):
                raise ValueError("bipolar problem needs a positive smoothing step")

    @property
    def mean_zero_pressure(self):
        return self.kind == DOUBLE_PIPE

    def boundary_conditions(self):
        if self.kind == DOUBLE_PIPE:
            return {
                int(BoundaryTag.INFLOW): double_pipe_profile,
                int(BoundaryTag.OUTFLOW): double_pipe_profile,
                int(BoundaryTag.WALL): _zero_velocity,
                int(BoundaryTag.HOLE): _zero_velocity,
            }
        return {
            int(BoundaryTag.INFLOW): bipolar_inflow_profile,
            int(BoundaryTag.WALL): _zero_velocity,
            int(BoundaryTag.OUTFLOW): fem.NATURAL,
        }

    def space(self):
        return fem.taylor_hood(self.mesh)

    def _dirichlet(self):
        cached = self._ctx.get("dirichlet")
        if cached is None:
            cached = fem.dirichlet_velocity_dofs(self.space(), self.boundary_conditions())
            self._ctx["dirichlet"] = cached
        return cached

    def _helmholtz(self):
        cached = self._ctx.get("helmholtz")
        if cached is None:
            cached = fem.HelmholtzP2(self.space(), self.smoothing_dt)
            self._ctx["helmholtz"] = cached
        return cached

    def effective_alpha(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        if self.frozen_solid is not None:
            alpha = np.where(self.frozen_solid, self.alpha_solid, alpha)
        return alpha


def double_pipe_problem(mesh, volume, alpha_fluid=ALPHA_FLUID_DEFAULT,
                        alpha_solid=ALPHA_SOLID_DEFAULT, frozen_solid=None):
    return ProblemSpec(DOUBLE_PIPE, mesh, volume, alpha_fluid, alpha_solid,
                       frozen_solid=frozen_solid)


def bipolar_problem(mesh, volume, threshold_speed=0.1, smoothing_dt=1e-3,
                    alpha_fluid=ALPHA_FLUID_DEFAULT, alpha_solid=ALPHA_SOLID_DEFAULT):
    return ProblemSpec(BIPOLAR, mesh, volume, alpha_fluid, alpha_solid,
                       threshold_speed=threshold_speed, smoothing_dt=smoothing_dt)


# ---------------------------------------------------------------------------
# states

@dataclass(eq=False)
class FlowState:
    u: fem.VectorFieldP2
    p: fem.ScalarFieldP1
    multiplier: float
    alpha: np.ndarray
    system: fem.LinearSystem


@dataclass(eq=False)
class AdjointState:
    v: fem.VectorFieldP2
    q: fem.ScalarFieldP1


@dataclass(eq=False)
class SmoothedState:
    u_s: fem.VectorFieldP2
    v_s: Optional[fem.VectorFieldP2] = None


# ---------------------------------------------------------------------------
# solves

def solve_flow(spec: ProblemSpec, alpha) -> FlowState:
    """State solve for the given per-element drag field."""
    alpha = spec.effective_alpha(alpha)
    system = fem.assemble_stokes_darcy(
        spec.mesh, alpha, spec.boundary_conditions(), spec.mean_zero_pressure,
        dirichlet=spec._dirichlet())
    x = system.solve()
    u, p, lam = fem.split_solution(spec.space(), x, spec.mean_zero_pressure)
    return FlowState(fem.VectorFieldP2(spec.mesh, u), fem.ScalarFieldP1(spec.mesh, p),
                     lam, alpha, system)


def solve_adjoint(spec: ProblemSpec, flow: FlowState,
                  smoothed: Optional[SmoothedState] = None) -> AdjointState:
    """Adjoint flow solve, reusing the factorization of the state system.

    double_pipe: right-hand side is the weak form of 2(lap u - alpha u),
    i.e. w -> -2 (a(u, w) + (alpha u, w)); bipolar: momentum source
    (1/dt) v_s from the smoothing adjoint.
    """
    space = spec.space()
    n = space.size(spec.mean_zero_pressure)
    rhs = np.zeros(n)
    if spec.kind == DOUBLE_PIPE:
        rhs[: space.n_velocity] = -2.0 * space.apply_velocity_operator(
            flow.alpha, flow.u.components).ravel()
    else:
        if smoothed is None or smoothed.v_s is None:
            raise ValueError("bipolar adjoint needs a smoothed state with v_s")
        load = smoothed.v_s.components @ space.scalar_mass.T / spec.smoothing_dt
        rhs[: space.n_velocity] = load.ravel()

    dofs, _ = spec._dirichlet()
    rhs[dofs] = 0.0
    x = flow.system.solve(rhs)
    v, q, _ = fem.split_solution(space, x, spec.mean_zero_pressure)
    return AdjointState(fem.VectorFieldP2(spec.mesh, v), fem.ScalarFieldP1(spec.mesh, q))


def smooth_velocity(spec: ProblemSpec, flow: FlowState) -> SmoothedState:
    """One implicit heat step applied per velocity component, zero-flux
    boundary; preserves the mean of each component."""
    if spec.kind != BIPOLAR:
        raise ValueError("smoothing applies to the bipolar problem")
    space = spec.space()
    op = spec._helmholtz()
    rhs = flow.u.components @ space.scalar_mass.T / spec.smoothing_dt
    u_s = np.vstack([op.solve(rhs[0]), op.solve(rhs[1])])
    return SmoothedState(fem.VectorFieldP2(spec.mesh, u_s))


def smoothing_adjoint(spec: ProblemSpec, smoothed: SmoothedState) -> SmoothedState:
    """Adjoint of the smoothing step with the shortfall source
    -4 u_s min(0, |u_s|^2 - threshold^2)."""
    space = spec.space()
    qp, _, wdet = space.quad_points(6)
    vals, _ = fem.p2_basis(qp)
    uq = space.eval_p2_at(smoothed.u_s, qp)  # (2, nt, nq)
    shortfall = np.minimum(0.0, uq[0] ** 2 + uq[1] ** 2 - spec.threshold_speed ** 2)
    src = -4.0 * uq * shortfall[None, :, :]
    loc = np.einsum("tq,ktq,qi->kti", wdet, src, vals)
    load = np.zeros((2, space.n_scalar))
    for k in range(2):
        np.add.at(load[k], space.p2_dofs.ravel(), loc[k].ravel())
    op = spec._helmholtz()
    v_s = np.vstack([op.solve(load[0]), op.solve(load[1])])
    return SmoothedState(smoothed.u_s, fem.VectorFieldP2(spec.mesh, v_s))


def objective(spec: ProblemSpec, flow: FlowState,
              smoothed: Optional[SmoothedState] = None) -> float:
    """double_pipe: dissipation integral; bipolar: squared Moreau-Yosida
    shortfall of the smoothed speed (degree-6 quadrature per element)."""
    space = spec.space()
    if spec.kind == DOUBLE_PIPE:
        au = space.apply_velocity_operator(flow.alpha, flow.u.components)
        return float(np.sum(au * flow.u.components))
    if smoothed is None:
        raise ValueError("bipolar objective needs the smoothed state")
    qp, _, wdet = space.quad_points(6)
    uq = space.eval_p2_at(smoothed.u_s, qp)
    shortfall = np.minimum(0.0, uq[0] ** 2 + uq[1] ** 2 - spec.threshold_speed ** 2)
    return float(np.sum(wdet * shortfall ** 2))


def top_derivative(spec: ProblemSpec, flow: FlowState, adj: AdjointState) -> fem.ScalarFieldP1:
    """Generalized topological derivative sampled at mesh vertices.

    The scale factor is alpha_solid - alpha_fluid; the overall sign is the
    descent-consistent one, validated against finite differences of the
    objective in the per-element drag (see the adjoint-consistency tests).
    """
    uv = flow.u.at_vertices()
    vv = adj.v.at_vertices()
    coef = spec.alpha_solid - spec.alpha_fluid
    if spec.kind == DOUBLE_PIPE:
        density = np.sum(uv * (uv + vv), axis=1)
    else:
        density = np.sum(uv * vv, axis=1)
    return fem.ScalarFieldP1(spec.mesh, -coef * density)


def alpha_sensitivity_density(spec: ProblemSpec, flow: FlowState,
                              adj: AdjointState) -> np.ndarray:
    """Per-element dJ/dalpha_e, exact for the discrete problem:
    integral over the element of u.(u+v) (double_pipe) or u.v (bipolar)."""
    space = spec.space()
    u = flow.u.components[:, space.p2_dofs]          # (2, nt, 6)
    v = adj.v.components[:, space.p2_dofs]
    w = u + v if spec.kind == DOUBLE_PIPE else v
    return np.einsum("kti,tij,ktj->t", u, space.mass_el, w)


def constraint_gap(spec: ProblemSpec, smoothed: SmoothedState) -> float:
    """Percentage of the domain where the smoothed speed falls below the
    threshold, measured with the degree-6 quadrature indicator."""
    if spec.kind != BIPOLAR:
        raise ValueError("constraint gap applies to the bipolar problem")
    space = spec.space()
    qp, _, wdet = space.quad_points(6)
    uq = space.eval_p2_at(smoothed.u_s, qp)
    below = (uq[0] ** 2 + uq[1] ** 2) < spec.threshold_speed ** 2
    return float(100.0 * np.sum(wdet * below) / spec.mesh.total_area)


def boundary_flux(mesh: Mesh, u: fem.VectorFieldP2, tag) -> float:
    """Outward flux of u through the boundary edges with the given tag
    (Simpson rule per edge, exact for the quadratic trace)."""
    space = fem.taylor_hood(mesh)
    edge_lookup = {tuple(e): i for i, e in enumerate(map(tuple, mesh.edges))}
    tri_of_edge = mesh._cache.get("tri_of_edge")
    if tri_of_edge is None:
        tri_of_edge = {}
        for t, eids in enumerate(mesh.tri_edges):
            for e in eids:
                tri_of_edge.setdefault(int(e), t)
        mesh._cache["tri_of_edge"] = tri_of_edge

    centroids = mesh.centroids()
    total = 0.0
    for edge, etag in zip(mesh.boundary_edges, mesh.boundary_tags):
        if int(etag) != int(tag):
            continue
        a, b = int(edge[0]), int(edge[1])
        eid = edge_lookup[(a, b)]
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        tang = pb - pa
        normal = np.array([tang[1], -tang[0]])
        mid = 0.5 * (pa + pb)
        if np.dot(normal, mid - centroids[tri_of_edge[eid]]) < 0.0:
            normal = -normal  # length of tang built in, so this is n * |edge|
        fa = u.components[:, a] @ normal
        fb = u.components[:, b] @ normal
        fm = u.components[:, mesh.num_vertices + eid] @ normal
        total += (fa + 4.0 * fm + fb) / 6.0
    return float(total)
