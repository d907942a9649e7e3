"""Mixed Taylor-Hood finite elements on triangles.

Quadratic Lagrange velocity, linear Lagrange pressure.  The module provides
the degree-of-freedom layout, exact quadrature rules up to degree six,
assembly of the generalized Stokes (Brinkman-type) saddle-point system with
an element-constant drag coefficient, component-wise quadratic Helmholtz
operators for velocity smoothing, and a sparse direct solve.

Velocity scalar dofs are ordered vertices first, then edge midpoints; the
two velocity components are blocked, pressure dofs follow, and an optional
scalar multiplier enforcing a mean-zero pressure sits last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import BoundaryTag, Mesh


class AssemblyError(RuntimeError):
    """Boundary conditions do not cover the mesh as required."""


class SolveError(RuntimeError):
    """Factorization failed or the residual check did not pass."""


# ---------------------------------------------------------------------------
# quadrature on the reference triangle (0,0)-(1,0)-(0,1)
#
# Weights sum to 1/2 (the reference area); rules are the standard symmetric
# Gauss rules exact to the stated polynomial degree.

def _perm3(a):
    b = 1.0 - 2.0 * a
    return [(a, a), (b, a), (a, b)]


def _perm6(a, b):
    c = 1.0 - a - b
    pts = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
    return [(l1, l2) for (_, l1, l2) in pts]


def quadrature_rule(degree):
    if degree <= 2:
        pts = _perm3(1.0 / 6.0)
        wts = [1.0 / 6.0] * 3
    elif degree <= 4:
        pts = _perm3(0.445948490915965) + _perm3(0.091576213509771)
        wts = [0.223381589678011 / 2.0] * 3 + [0.109951743655322 / 2.0] * 3
    elif degree <= 6:
        pts = (_perm3(0.063089014491502)
               + _perm3(0.249286745170910)
               + _perm6(0.053145049844816, 0.310352451033785))
        wts = ([0.050844906370207 / 2.0] * 3
               + [0.116786275726379 / 2.0] * 3
               + [0.082851075618374 / 2.0] * 6)
    else:
        raise ValueError(f"no rule of degree {degree}")
    return np.array(pts), np.array(wts)


def p1_basis(points):
    xi, eta = points[:, 0], points[:, 1]
    vals = np.column_stack([1.0 - xi - eta, xi, eta])
    grads = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return vals, np.broadcast_to(grads, (points.shape[0], 3, 2))


def p2_basis(points):
    xi, eta = points[:, 0], points[:, 1]
    lam = np.column_stack([1.0 - xi - eta, xi, eta])
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])

    nq = points.shape[0]
    vals = np.empty((nq, 6))
    grads = np.empty((nq, 6, 2))
    for i in range(3):
        vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i, :] = (4.0 * lam[:, i] - 1.0)[:, None] * dlam[i]
    # edge functions: dof 3+i belongs to the edge opposite vertex i
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        vals[:, 3 + i] = 4.0 * lam[:, j] * lam[:, k]
        grads[:, 3 + i, :] = 4.0 * (lam[:, j][:, None] * dlam[k]
                                    + lam[:, k][:, None] * dlam[j])
    return vals, grads


# ---------------------------------------------------------------------------
# fields

@dataclass(eq=False)
class ScalarFieldP1:
    """Nodal values at mesh vertices, piecewise linear."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.num_vertices,):
            raise ValueError("value count must equal the vertex count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


@dataclass(eq=False)
class VectorFieldP2:
    """Two-component field with values at vertices and edge midpoints.

    components has shape (2, num_vertices + num_edges); component k at
    scalar dof i is components[k, i].
    """

    mesh: Mesh
    components: np.ndarray

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=float)
        n = self.mesh.num_vertices + self.mesh.num_edges
        if self.components.shape != (2, n):
            raise ValueError("value count must equal 2 x (vertices + edges)")
        if not np.all(np.isfinite(self.components)):
            raise ValueError("field values must be finite")

    def at_vertices(self):
        return self.components[:, : self.mesh.num_vertices].T


def p1_mass_matrix(mesh):
    cached = mesh._cache.get("p1_mass")
    if cached is not None:
        return cached
    tri = mesh.triangles
    areas = mesh.element_areas
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    data = areas[:, None, None] * local
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    m = sp.coo_matrix((data.ravel(), (rows, cols)),
                      shape=(mesh.num_vertices,) * 2).tocsr()
    mesh._cache["p1_mass"] = m
    return m


def l2_inner(a: ScalarFieldP1, b: ScalarFieldP1) -> float:
    """Exact integral of a*b over the mesh for piecewise-linear fields."""
    if a.mesh is not b.mesh:
        raise ValueError("fields live on different meshes")
    return float(a.values @ (p1_mass_matrix(a.mesh) @ b.values))


def l2_norm(a: ScalarFieldP1) -> float:
    return float(np.sqrt(max(l2_inner(a, a), 0.0)))


# ---------------------------------------------------------------------------
# Taylor-Hood space with cached element tensors

class TaylorHoodSpace:
    """Dof layout and precomputed element matrices for one mesh."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        nv, ne, nt = mesh.num_vertices, mesh.num_edges, mesh.num_triangles
        self.n_scalar = nv + ne
        self.n_velocity = 2 * self.n_scalar
        self.n_pressure = nv

        # scalar P2 dof map per triangle: vertices then opposite-edge midpoints
        self.p2_dofs = np.hstack([mesh.triangles, nv + mesh.tri_edges])
        self.dof_coords = np.vstack([mesh.vertices, mesh.edge_midpoints()])

        p0 = mesh.vertices[mesh.triangles[:, 0]]
        d1 = mesh.vertices[mesh.triangles[:, 1]] - p0
        d2 = mesh.vertices[mesh.triangles[:, 2]] - p0
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        # inverse transpose of the affine map Jacobian [d1 d2]
        inv_jt = np.empty((nt, 2, 2))
        inv_jt[:, 0, 0] = d2[:, 1] / det
        inv_jt[:, 0, 1] = -d1[:, 1] / det
        inv_jt[:, 1, 0] = -d2[:, 0] / det
        inv_jt[:, 1, 1] = d1[:, 0] / det
        self._det = det
        self._inv_jt = inv_jt
        self._origin = p0
        self._jac = np.stack([d1, d2], axis=2)  # (nt, 2, 2), columns d1 d2

        qp, qw = quadrature_rule(4)
        self._qp4, self._qw4 = qp, qw
        v2, g2 = p2_basis(qp)
        v1, _ = p1_basis(qp)
        self._p2_vals4 = v2
        self._p1_vals4 = v1

        # physical gradients of P2 basis: (nt, nq, 6, 2)
        gphys = np.einsum("tab,qib->tqia", inv_jt, g2)
        wdet = qw[None, :] * det[:, None]  # (nt, nq)

        self.stiffness_el = np.einsum("tq,tqia,tqja->tij", wdet, gphys, gphys)
        self.mass_el = np.einsum("tq,qi,qj->tij", wdet, v2, v2)
        # divergence blocks: rows pressure (P1), columns velocity (P2)
        self.divx_el = np.einsum("tq,qi,tqj->tij", wdet, v1, gphys[:, :, :, 0])
        self.divy_el = np.einsum("tq,qi,tqj->tij", wdet, v1, gphys[:, :, :, 1])

        self._gphys4 = gphys
        self._wdet4 = wdet

        # global scalar P2 stiffness/mass (smoothing operators, objectives)
        rows = np.repeat(self.p2_dofs, 6, axis=1).ravel()
        cols = np.tile(self.p2_dofs, (1, 6)).ravel()
        shape = (self.n_scalar, self.n_scalar)
        self.scalar_stiffness = sp.coo_matrix(
            (self.stiffness_el.ravel(), (rows, cols)), shape=shape).tocsr()
        self.scalar_mass = sp.coo_matrix(
            (self.mass_el.ravel(), (rows, cols)), shape=shape).tocsr()

        # P1 integral of each pressure basis function
        self.pressure_integral = np.bincount(
            mesh.triangles.ravel(),
            weights=np.repeat(mesh.element_areas / 3.0, 3),
            minlength=nv)

        self._assembly_index = {}

    # -- quadrature-point evaluation helpers ------------------------------

    def quad_points(self, degree):
        qp, qw = quadrature_rule(degree)
        phys = (self._origin[:, None, :]
                + np.einsum("tab,qb->tqa", self._jac, qp))
        wdet = qw[None, :] * self._det[:, None]
        return qp, phys, wdet

    def eval_p2_at(self, field: VectorFieldP2, qp):
        """Values of a P2 vector field at reference points qp, per element.

        Returns array (2, nt, nq)."""
        vals, _ = p2_basis(qp)
        coeffs = field.components[:, self.p2_dofs]  # (2, nt, 6)
        return np.einsum("ktj,qj->ktq", coeffs, vals)

    # -- system assembly ---------------------------------------------------

    def _index_structure(self, mean_zero):
        cached = self._assembly_index.get(mean_zero)
        if cached is not None:
            return cached

        n_s = self.n_scalar
        dof_x = self.p2_dofs
        dof_y = self.p2_dofs + n_s
        pres = 2 * n_s + self.mesh.triangles

        def pair(rdofs, cdofs, rn, cn):
            rows = np.repeat(rdofs, cn, axis=1).ravel()
            cols = np.tile(cdofs, (1, rn)).ravel()
            return rows, cols

        blocks = []
        # viscous + drag blocks (6x6) for both components
        blocks.append(pair(dof_x, dof_x, 6, 6))
        blocks.append(pair(dof_y, dof_y, 6, 6))
        blocks.append(pair(dof_x, dof_x, 6, 6))
        blocks.append(pair(dof_y, dof_y, 6, 6))
        # -B^T (velocity rows, pressure cols), 6x3
        blocks.append(pair(dof_x, pres, 6, 3))
        blocks.append(pair(dof_y, pres, 6, 3))
        # -B (pressure rows, velocity cols), 3x6
        blocks.append(pair(pres, dof_x, 3, 6))
        blocks.append(pair(pres, dof_y, 3, 6))

        rows = np.concatenate([b[0] for b in blocks])
        cols = np.concatenate([b[1] for b in blocks])

        if mean_zero:
            pdofs = 2 * n_s + np.arange(self.n_pressure)
            mult = np.full(self.n_pressure, self.size(mean_zero) - 1)
            rows = np.concatenate([rows, pdofs, mult])
            cols = np.concatenate([cols, mult, pdofs])

        divx_t = np.transpose(self.divx_el, (0, 2, 1)).ravel()
        divy_t = np.transpose(self.divy_el, (0, 2, 1)).ravel()
        static = [
            self.stiffness_el.ravel(), self.stiffness_el.ravel(),
            None, None,
            -divx_t, -divy_t,
            -self.divx_el.ravel(), -self.divy_el.ravel(),
        ]
        if mean_zero:
            tail = np.concatenate([self.pressure_integral] * 2)
        else:
            tail = np.zeros(0)
        out = (rows, cols, static, tail)
        self._assembly_index[mean_zero] = out
        return out

    def size(self, mean_zero):
        return self.n_velocity + self.n_pressure + (1 if mean_zero else 0)

    def stokes_matrix_data(self, alpha, mean_zero):
        """COO triplets of the saddle-point matrix for the given per-element
        drag coefficient; rows/cols are cached, only the drag block varies."""
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (self.mesh.num_triangles,):
            raise ValueError("alpha must be per-element")
        # alpha = 0 is the plain Stokes limit and is allowed
        if np.any(alpha < 0.0) or not np.all(np.isfinite(alpha)):
            raise ValueError("alpha values must be nonnegative and finite")
        rows, cols, static, tail = self._index_structure(mean_zero)
        drag = (alpha[:, None, None] * self.mass_el).ravel()
        parts = [static[0], static[1], drag, drag,
                 static[4], static[5], static[6], static[7], tail]
        data = np.concatenate(parts)
        return rows, cols, data

    def drag_matrix(self, alpha):
        """Velocity-block drag mass matrix for a per-element coefficient."""
        alpha = np.asarray(alpha, dtype=float)
        data = (alpha[:, None, None] * self.mass_el).ravel()
        rows = np.repeat(self.p2_dofs, 6, axis=1).ravel()
        cols = np.tile(self.p2_dofs, (1, 6)).ravel()
        m = sp.coo_matrix((data, (rows, cols)),
                          shape=(self.n_scalar, self.n_scalar)).tocsr()
        return sp.block_diag([m, m]).tocsr()

    def velocity_operator(self, alpha):
        """A + M_alpha acting on blocked velocity coefficients."""
        k = sp.block_diag([self.scalar_stiffness] * 2).tocsr()
        return k + self.drag_matrix(alpha)

    def apply_velocity_operator(self, alpha, components):
        """(A + M_alpha) applied to (2, n_scalar) coefficients, matrix-free."""
        alpha = np.asarray(alpha, dtype=float)
        el = self.stiffness_el + alpha[:, None, None] * self.mass_el
        out = np.zeros_like(components)
        for k in range(2):
            loc = components[k][self.p2_dofs]
            contrib = np.einsum("tij,tj->ti", el, loc)
            np.add.at(out[k], self.p2_dofs.ravel(), contrib.ravel())
        return out

    def body_force_vector(self, force, degree=4):
        """Velocity load vector for a callable force(x, y) -> (fx, fy)."""
        qp, phys, wdet = self.quad_points(degree)
        vals, _ = p2_basis(qp)
        f = np.array([[force(x, y) for x, y in row] for row in phys])  # (nt, nq, 2)
        loc = np.einsum("tq,tqk,qi->kti", wdet, f, vals)  # (2, nt, 6)
        out = np.zeros(self.n_velocity)
        n_s = self.n_scalar
        np.add.at(out, self.p2_dofs.ravel(), loc[0].ravel())
        np.add.at(out, (self.p2_dofs + n_s).ravel(), loc[1].ravel())
        return out


def taylor_hood(mesh) -> TaylorHoodSpace:
    space = mesh._cache.get("taylor_hood")
    if space is None:
        space = TaylorHoodSpace(mesh)
        mesh._cache["taylor_hood"] = space
    return space


# ---------------------------------------------------------------------------
# boundary conditions

NATURAL = "natural"


def dirichlet_velocity_dofs(space, bc):
    """Collect constrained velocity dofs and their values.

    bc maps every boundary tag present in the mesh to either a callable
    (x, y) -> (ux, uy) or NATURAL.  Returns (dof indices, values) over the
    blocked velocity layout.
    """
    mesh = space.mesh
    present = set(int(t) for t in np.unique(mesh.boundary_tags))
    missing = present - set(int(t) for t in bc)
    if missing:
        raise AssemblyError(f"boundary tags without a condition: {sorted(missing)}")

    nv = mesh.num_vertices
    edge_lookup = {tuple(e): i for i, e in enumerate(map(tuple, mesh.edges))}
    values = {}
    # no-slip tags first so that in/outflow profiles win at shared vertices
    # of edges straddling a band end on meshes that do not resolve it exactly
    order = sorted(zip(map(tuple, mesh.boundary_edges), mesh.boundary_tags),
                   key=lambda item: (int(item[1]) in (BoundaryTag.INFLOW,
                                                      BoundaryTag.OUTFLOW),
                                     item[0]))
    for edge, tag in order:
        fn = bc[int(tag)]
        if fn == NATURAL:
            continue
        a, b = edge
        mid = nv + edge_lookup[(min(a, b), max(a, b))]
        for dof in (a, b, mid):
            x, y = space.dof_coords[dof]
            values[dof] = fn(x, y)

    if not values:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    sdofs = np.array(sorted(values), dtype=np.int64)
    vals = np.array([values[d] for d in sdofs], dtype=float)
    dofs = np.concatenate([sdofs, sdofs + space.n_scalar])
    return dofs, np.concatenate([vals[:, 0], vals[:, 1]])


# SuperLU settings for symmetric-pattern indefinite systems; relaxed
# diagonal pivoting keeps the fill-reducing order effective, the residual
# check below guards against the rare unstable factorization
_SPLU_SYMMETRIC = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=1e-3,
                       options={"SymmetricMode": True})


def _splu(matrix):
    try:
        return spla.splu(matrix, **_SPLU_SYMMETRIC)
    except RuntimeError:
        return spla.splu(matrix)


@dataclass(eq=False)
class LinearSystem:
    """Assembled sparse system with symmetric Dirichlet elimination applied."""

    matrix: sp.csc_matrix
    rhs: np.ndarray
    n_scalar: int
    n_pressure: int
    mean_zero: bool
    dirichlet_dofs: np.ndarray
    dirichlet_values: np.ndarray

    def __post_init__(self):
        if self.matrix.shape[0] != self.rhs.shape[0]:
            raise ValueError("matrix and rhs sizes differ")
        self._solver = None

    def _direct_solver(self):
        try:
            lu = _splu(self.matrix)
        except RuntimeError as exc:
            raise SolveError(
                f"sparse factorization failed for {self.matrix.shape[0]} dofs: {exc}"
            ) from exc
        return lu.solve

    def _bordered_solver(self):
        """Mean-zero systems: eliminate the multiplier analytically.

        The multiplier column couples the constant-pressure nullspace; with
        all velocity dofs on the Dirichlet boundary the pressure rows sum to
        zero, so the multiplier equals the summed continuity rhs over the
        measure of the domain, and the remaining singular-but-consistent
        system is solved with one pressure dof pinned, shifting the result
        back to a zero pressure mean.  Falls back to factoring the full
        augmented matrix if the residual check disagrees.
        """
        n = self.matrix.shape[0]
        pstart = 2 * self.n_scalar
        csr = self.matrix.tocsr()
        mcol = csr[: n - 1, n - 1].toarray().ravel()
        msum = mcol[pstart:].sum()
        if abs(msum) < 1e-30:
            raise SolveError("degenerate mean-zero augmentation")

        core = self.matrix[: n - 1, : n - 1].tocoo()
        keep = (core.row != pstart) & (core.col != pstart)
        pinned = sp.coo_matrix(
            (np.concatenate([core.data[keep], [1.0]]),
             (np.concatenate([core.row[keep], [pstart]]),
              np.concatenate([core.col[keep], [pstart]]))),
            shape=core.shape).tocsc()
        lu = _splu(pinned)

        def solve_fn(rhs):
            lam = rhs[pstart: n - 1].sum() / msum
            bhat = rhs[: n - 1] - mcol * lam
            bhat[pstart] = 0.0
            y = lu.solve(bhat)
            y[pstart:] -= (mcol[pstart:] @ y[pstart:]) / msum
            return np.concatenate([y, [lam]])

        return solve_fn

    def factorize(self):
        if self._solver is None:
            if self.mean_zero:
                try:
                    self._solver = self._bordered_solver()
                except (SolveError, RuntimeError):
                    self._solver = self._direct_solver()
            else:
                self._solver = self._direct_solver()
        return self._solver

    def _refine(self, x, rhs):
        # a couple of refinement steps recover the digits the relaxed
        # pivoting gives away; they cost only triangular solves
        solver = self._solver
        for _ in range(2):
            residual = rhs - self.matrix @ x
            if np.linalg.norm(residual) <= 1e-14 * max(np.linalg.norm(rhs), 1e-30):
                break
            x = x + solver(residual)
        return x

    def solve(self, rhs=None):
        rhs = self.rhs if rhs is None else rhs
        x = self._refine(self.factorize()(rhs), rhs)
        norm_rhs = max(np.linalg.norm(rhs), 1e-30)
        if np.linalg.norm(self.matrix @ x - rhs) > 1e-9 * norm_rhs:
            # retry once with the plain factorization of the full matrix
            self._solver = self._direct_solver()
            x = self._refine(self._solver(rhs), rhs)
            residual = np.linalg.norm(self.matrix @ x - rhs)
            if residual > 1e-9 * norm_rhs:
                raise SolveError(
                    f"direct solve residual {residual:.3e} exceeds tolerance "
                    f"({self.matrix.shape[0]} dofs)")
        # constrained rows are identities, enforce their values exactly
        x[self.dirichlet_dofs] = rhs[self.dirichlet_dofs]
        return x


def assemble_stokes_darcy(mesh, alpha, bc, mean_zero_pressure, body_force=None,
                          dirichlet=None):
    """Assemble the generalized Stokes system on Taylor-Hood spaces.

    Weak form of -div(grad u) + alpha u + grad p = f, div(u) = 0 with the
    per-element drag alpha; Dirichlet rows are eliminated symmetrically.
    When mean_zero_pressure is set, one multiplier row/column enforcing a
    zero pressure mean is appended.  ``dirichlet`` may carry precollected
    (dofs, values) to skip walking the boundary again.
    """
    space = taylor_hood(mesh)
    rows, cols, data = space.stokes_matrix_data(alpha, mean_zero_pressure)
    n = space.size(mean_zero_pressure)

    dofs, vals = dirichlet if dirichlet is not None else dirichlet_velocity_dofs(space, bc)

    rhs = np.zeros(n)
    if body_force is not None:
        rhs[: space.n_velocity] = space.body_force_vector(body_force)

    # symmetric elimination: move known columns to the rhs, then blank rows
    # and columns and put ones on the constrained diagonal
    lift = np.zeros(n)
    lift[dofs] = vals
    rhs -= np.bincount(rows, weights=data * lift[cols], minlength=n)
    rhs[dofs] = vals

    keep = np.ones(n, dtype=bool)
    keep[dofs] = False
    sel = keep[rows] & keep[cols]
    rows = np.concatenate([rows[sel], dofs])
    cols = np.concatenate([cols[sel], dofs])
    data = np.concatenate([data[sel], np.ones(dofs.shape[0])])

    matrix = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsc()
    return LinearSystem(matrix, rhs, space.n_scalar, space.n_pressure,
                        mean_zero_pressure, dofs, vals)


def solve(system: LinearSystem) -> np.ndarray:
    """Direct sparse solve with a residual check."""
    return system.solve()


def dump_matrix_market(system: LinearSystem, path):
    """Debugging aid: write the assembled matrix in Matrix Market format."""
    import scipy.io
    scipy.io.mmwrite(str(path), system.matrix)


def split_solution(space, x, mean_zero):
    """Split a raw coefficient vector into (velocity, pressure, multiplier)."""
    n_s = space.n_scalar
    u = x[: 2 * n_s].reshape(2, n_s)
    p = x[2 * n_s: 2 * n_s + space.n_pressure]
    lam = float(x[-1]) if mean_zero else 0.0
    return u, p, lam


class HelmholtzP2:
    """Factorized scalar operator m/dt + stiffness on the quadratic space,
    with natural (zero-flux) boundary conditions."""

    def __init__(self, space, dt):
        if dt <= 0.0:
            raise ValueError("smoothing step must be positive")
        self.space = space
        self.dt = dt
        matrix = (space.scalar_mass / dt + space.scalar_stiffness).tocsc()
        self._matrix = matrix
        self._factor = _splu(matrix)

    def solve(self, rhs):
        x = self._factor.solve(rhs)
        norm_rhs = max(np.linalg.norm(rhs), 1e-30)
        for _ in range(2):
            residual = rhs - self._matrix @ x
            if np.linalg.norm(residual) <= 1e-14 * norm_rhs:
                break
            x = x + self._factor.solve(residual)
        if np.linalg.norm(self._matrix @ x - rhs) > 1e-9 * norm_rhs:
            raise SolveError("smoothing solve residual check failed")
        return x
