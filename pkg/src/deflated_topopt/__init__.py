"""Deflation-based discovery of multiple local minimizers for 2D fluid
topology optimization (generalized Stokes flow, level-set descent driven by
topological derivatives)."""

from .mesh import (BoundaryTag, Mesh, MeshError, generate_double_pipe_mesh,
                   generate_rect_mesh)
from .fem import (AssemblyError, LinearSystem, ScalarFieldP1, SolveError,
                  VectorFieldP2, assemble_stokes_darcy, l2_inner, l2_norm,
                  solve)
from .physics import (AdjointState, FlowState, ProblemSpec, SmoothedState,
                      bipolar_problem, constraint_gap, double_pipe_problem,
                      objective, smooth_velocity, smoothing_adjoint,
                      solve_adjoint, solve_flow, top_derivative)
from .levelset import (LevelSet, SolverParams, VolumeConstraint, angle,
                       check_optimality, fluid_fraction, project_volume,
                       shift_to_volume, solve_topopt, sphere_update)
from .deflation import (DeflationState, PenaltyParams, ShapeSnapshot,
                        compose_chain, deflate, is_unperturbed_minimizer,
                        penalty, penalty_set, penalty_top_derivative,
                        shape_dist)
from .toy import ScalarProblem, deflate_scalar, rastrigin

__all__ = [name for name in dir() if not name.startswith("_")]
