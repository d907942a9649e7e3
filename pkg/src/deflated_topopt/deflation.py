"""Shape distance, vanishing-threshold penalties, and the deflation loop.

Previously found shapes are penalized in the objective with a smooth bump
that is exactly zero once the indicator-function distance exceeds a
threshold.  Re-discovered shapes are penalized again (stacking copies,
which effectively raises the penalty weight), and rounds whose perturbed
minimizer is still inside some threshold ball trigger a restart of the
unperturbed problem from that minimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fem, levelset as lsm, physics


@dataclass(frozen=True)
class PenaltyParams:
    """Threshold distance, penalty weight, and the sameness tolerance used
    for solution-set membership (defaults to a tenth of the threshold)."""

    gamma: float
    delta: float
    tau_same: Optional[float] = None

    def __post_init__(self):
        if self.gamma <= 0.0 or self.delta <= 0.0:
            raise ValueError("penalty parameters must be positive")
        if self.tau_same is None:
            object.__setattr__(self, "tau_same", self.gamma / 10.0)
        elif self.tau_same <= 0.0:
            raise ValueError("sameness tolerance must be positive")


@dataclass(eq=False)
class ShapeSnapshot:
    """Frozen record of one shape: enough to evaluate distances (element
    fluid fractions and areas) and penalty derivatives (nodal indicator of
    the stored field), plus bookkeeping."""

    mesh: object
    fractions: np.ndarray
    element_areas: np.ndarray
    nodal_fluid: np.ndarray
    levelset_values: np.ndarray
    objective: float
    round_found: int = 0
    via_restart: bool = False
    constraint_gap: Optional[float] = None

    def __post_init__(self):
        self.fractions = np.array(self.fractions, dtype=float)
        self.levelset_values = np.array(self.levelset_values, dtype=float)
        self.nodal_fluid = np.array(self.nodal_fluid, dtype=bool)
        if np.any(self.fractions < 0.0) or np.any(self.fractions > 1.0):
            raise ValueError("fractions must lie in [0, 1]")
        for arr in (self.fractions, self.levelset_values, self.nodal_fluid):
            arr.setflags(write=False)

    @classmethod
    def from_levelset(cls, ls: lsm.LevelSet, objective, round_found=0,
                      via_restart=False, constraint_gap=None):
        return cls(ls.mesh, ls.fractions, ls.mesh.element_areas,
                   ls.nodal_fluid(), ls.values, float(objective),
                   round_found, via_restart, constraint_gap)

    def levelset(self) -> lsm.LevelSet:
        return lsm.LevelSet(self.mesh, self.levelset_values)


def _check_same_mesh(a, b):
    if a.fractions.shape != b.fractions.shape:
        raise ValueError("snapshots live on different meshes")


def shape_dist_squared(a: ShapeSnapshot, b: ShapeSnapshot) -> float:
    """Squared indicator distance; for pure 0/1 shapes this is exactly the
    symmetric-difference area."""
    _check_same_mesh(a, b)
    return float(a.element_areas @ (a.fractions - b.fractions) ** 2)


def shape_dist(a: ShapeSnapshot, b: ShapeSnapshot) -> float:
    """L2 distance of the phase indicators, evaluated from element
    fractions."""
    return math.sqrt(max(shape_dist_squared(a, b), 0.0))


def penalty(a: ShapeSnapshot, b: ShapeSnapshot, params: PenaltyParams) -> float:
    return penalty_of_distance(shape_dist(a, b), params)


def penalty_of_distance(dist, params: PenaltyParams) -> float:
    if dist >= params.gamma:
        return 0.0
    g2 = params.gamma ** 2
    return params.delta * math.exp(g2 / (dist ** 2 - g2))


def penalty_set(a: ShapeSnapshot, defs, params: PenaltyParams) -> float:
    return sum(penalty(a, b, params) for b in defs)


def penalty_top_derivative(a: ShapeSnapshot, b: ShapeSnapshot,
                           params: PenaltyParams) -> fem.ScalarFieldP1:
    """Generalized topological derivative of the penalty with respect to
    the candidate shape, as a nodal field: the derivative of the squared
    distance is 1 - 2*chi of the stored shape, scaled through the chain
    rule of the bump profile."""
    _check_same_mesh(a, b)
    values = _penalty_derivative_values(shape_dist(a, b), b.nodal_fluid, params)
    return fem.ScalarFieldP1(b.mesh, values)


def _penalty_derivative_values(dist, nodal_fluid, params):
    if dist >= params.gamma:
        return np.zeros(nodal_fluid.shape[0])
    g2 = params.gamma ** 2
    denom = dist ** 2 - g2
    scale = -params.delta * g2 / denom ** 2 * math.exp(g2 / denom)
    return scale * (1.0 - 2.0 * nodal_fluid.astype(float))


def compose_chain(dj, j_value, f_prime):
    """Topological derivative of f(J): the inner derivative scaled by
    f'(J).  Accepts a nodal field, an array, or a scalar."""
    scale = f_prime(j_value)
    if isinstance(dj, fem.ScalarFieldP1):
        return fem.ScalarFieldP1(dj.mesh, scale * dj.values)
    return scale * dj


def is_unperturbed_minimizer(a: ShapeSnapshot, defs, params: PenaltyParams) -> bool:
    """True when every penalty vanishes, i.e. the shape keeps the
    threshold distance to all stored shapes."""
    return all(shape_dist(a, b) >= params.gamma for b in defs)


class PenaltyObjective:
    """Adapter feeding the stacked penalties into the shape optimizer."""

    def __init__(self, defs, params: PenaltyParams):
        self.defs = list(defs)
        self.params = params

    def _dist(self, ls: lsm.LevelSet, b: ShapeSnapshot) -> float:
        d2 = float(b.element_areas @ (ls.fractions - b.fractions) ** 2)
        return math.sqrt(max(d2, 0.0))

    def value(self, ls: lsm.LevelSet) -> float:
        return sum(penalty_of_distance(self._dist(ls, b), self.params)
                   for b in self.defs)

    def derivative_values(self, ls: lsm.LevelSet) -> np.ndarray:
        out = np.zeros(ls.mesh.num_vertices)
        for b in self.defs:
            out += _penalty_derivative_values(self._dist(ls, b),
                                              b.nodal_fluid, self.params)
        return out


# ---------------------------------------------------------------------------
# the deflation loop

@dataclass(eq=False)
class RoundRecord:
    round_index: int
    kind: str  # "unperturbed" | "deflated" | "restart"
    status: str
    objective: float = math.nan
    penalty_value: float = math.nan
    volume: float = math.nan
    added_solution_index: Optional[int] = None
    history: list = field(default_factory=list)
    error: Optional[str] = None


@dataclass(eq=False)
class DeflationState:
    solutions: list = field(default_factory=list)       # minimizers of the plain problem
    deflation_set: list = field(default_factory=list)   # shapes carrying penalties
    rounds: list = field(default_factory=list)
    restarts: int = 0
    params: Optional[PenaltyParams] = None

    def is_new_solution(self, snap):
        tau = self.params.tau_same
        return all(shape_dist(snap, s) >= tau for s in self.solutions)


def deflate(spec, init: lsm.LevelSet, solver: lsm.SolverParams,
            params: PenaltyParams, budget: int) -> DeflationState:
    """Compute multiple local minimizers within the given solve budget.

    The budget counts topology-optimization solves excluding restarts: the
    first solve is unperturbed and seeds both sets; every following round
    solves the penalized problem from the same initial field.  A round
    whose result keeps the threshold distance to every stored shape is a
    minimizer of the plain problem and joins both sets; otherwise it joins
    only the penalty set and a restart is performed from it, whose result
    joins the solutions unless already present.  Inner solver failures are
    recorded and the loop continues.
    """
    if budget < 1:
        raise ValueError("budget must be at least one solve")
    state = DeflationState(params=params)

    def run_round(index, kind, start, extra):
        record = RoundRecord(index, kind, "failed")
        try:
            result = lsm.solve_topopt(spec, start, solver, extra)
        except (fem.SolveError, fem.AssemblyError, lsm.BisectionError,
                lsm.NoBracketError) as exc:
            record.error = str(exc)
            state.rounds.append(record)
            return record, None
        record.status = result.status
        record.objective = result.evaluation.objective
        record.penalty_value = result.evaluation.penalty
        record.volume = result.levelset.volume
        record.history = result.history
        state.rounds.append(record)
        return record, result

    def snapshot(result, index, via_restart):
        gap = None
        if spec.kind == physics.BIPOLAR and result.evaluation.smoothed is not None:
            gap = physics.constraint_gap(spec, result.evaluation.smoothed)
        return ShapeSnapshot.from_levelset(
            result.levelset, result.evaluation.objective, index, via_restart, gap)

    def admit(snap, record):
        if state.is_new_solution(snap):
            state.solutions.append(snap)
            record.added_solution_index = len(state.solutions) - 1

    record, result = run_round(1, "unperturbed", init, None)
    if result is not None:
        seed = snapshot(result, 1, False)
        admit(seed, record)
        state.deflation_set.append(seed)

    for index in range(2, budget + 1):
        extra = PenaltyObjective(state.deflation_set, params)
        record, result = run_round(index, "deflated", init, extra)
        if result is None:
            continue
        snap = snapshot(result, index, False)
        state.deflation_set.append(snap)
        if is_unperturbed_minimizer(snap, state.deflation_set[:-1], params):
            admit(snap, record)
        else:
            state.restarts += 1
            r_record, r_result = run_round(index, "restart", result.levelset, None)
            if r_result is None:
                continue
            r_snap = snapshot(r_result, index, True)
            admit(r_snap, r_record)

    return state
