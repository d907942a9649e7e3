"""One-dimensional deflation demo on the Rastrigin function.

Exercises the full deflation loop (stacked penalties, adaptive weight
through re-penalization, restarts) with a scalar gradient-descent inner
solver, entirely without PDE machinery.  The distance between two scalar
"shapes" is plainly |x - y|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from .deflation import PenaltyParams, compose_chain


def rastrigin(x: float) -> float:
    return 10.0 + x * x - 10.0 * math.cos(2.0 * math.pi * x)


def rastrigin_gradient(x: float) -> float:
    return 2.0 * x + 20.0 * math.pi * math.sin(2.0 * math.pi * x)


@dataclass(frozen=True)
class ScalarProblem:
    objective: Callable[[float], float]
    gradient: Callable[[float], float]
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("empty search interval")

    def clip(self, x):
        return min(max(x, self.lower), self.upper)


def rastrigin_problem(lower=-5.12, upper=5.12) -> ScalarProblem:
    return ScalarProblem(rastrigin, rastrigin_gradient, lower, upper)


def _penalty_value(x, centers, params: PenaltyParams) -> float:
    total = 0.0
    g2 = params.gamma ** 2
    for c in centers:
        d = abs(x - c)
        if d < params.gamma:
            total += params.delta * math.exp(g2 / (d * d - g2))
    return total


def _penalty_gradient(x, centers, params: PenaltyParams) -> float:
    """Chain rule through the bump profile; the inner derivative of the
    squared distance is 2 (x - c)."""
    g2 = params.gamma ** 2

    def profile_prime(z):
        return -params.delta * g2 / (z - g2) ** 2 * math.exp(g2 / (z - g2))

    total = 0.0
    for c in centers:
        d2 = (x - c) ** 2
        if d2 < g2:
            total += compose_chain(2.0 * (x - c), d2, profile_prime)
    return total


def descend(problem: ScalarProblem, x0, centers=(), params=None,
            step=0.01, grad_tol=1e-6, max_iters=100000) -> float:
    """Gradient descent with backtracking halving.

    A start (or iterate) with a vanishing total gradient is probed one
    base step to each side; if neither side improves, the point is a local
    minimizer and is returned.  The probe resolves stationary saddle
    points such as a re-penalized minimizer that has turned into a local
    maximum."""

    def f(x):
        val = problem.objective(x)
        if centers:
            val += _penalty_value(x, centers, params)
        return val

    def g(x):
        val = problem.gradient(x)
        if centers:
            val += _penalty_gradient(x, centers, params)
        return val

    def probe(x):
        fx = f(x)
        right = problem.clip(x + step)
        left = problem.clip(x - step)
        candidates = [(f(right), right), (f(left), left)]
        best = min(candidates, key=lambda t: t[0])
        return best[1] if best[0] < fx else None

    x = problem.clip(x0)
    for _ in range(max_iters):
        grad = g(x)
        if abs(grad) <= grad_tol:
            moved = probe(x)
            if moved is None:
                return x
            x = moved
            continue
        fx = f(x)
        s = step
        moved = None
        while s > 1e-15:
            cand = problem.clip(x - s * grad)
            if cand != x and f(cand) < fx:
                moved = cand
                break
            s *= 0.5
        if moved is None:
            moved = probe(x)
            if moved is None:
                return x
        x = moved
    return x


@dataclass(eq=False)
class ToyRound:
    round_index: int
    kind: str  # "unperturbed" | "deflated" | "restart"
    x: float
    objective: float
    via_restart: bool
    added: bool


@dataclass(eq=False)
class ToyDeflation:
    minimizers: list = field(default_factory=list)
    deflation_centers: list = field(default_factory=list)
    rounds: list = field(default_factory=list)
    restarts: int = 0


def deflate_scalar(problem: ScalarProblem, x0, params: PenaltyParams,
                   budget: int, step=0.01, grad_tol=1e-6) -> ToyDeflation:
    """Scalar instance of the deflation procedure.

    Same bookkeeping as the PDE version: the budget counts non-restart
    solves, rediscoveries stack penalty copies, and restarts rescue
    perturbed minimizers that sit inside a threshold ball."""
    if budget < 1:
        raise ValueError("budget must be at least one solve")
    state = ToyDeflation()

    def is_new(x):
        return all(abs(x - s) >= params.tau_same for s in state.minimizers)

    def admit(record):
        if is_new(record.x):
            state.minimizers.append(record.x)
            record.added = True

    def run(index, kind, start, centers):
        x = descend(problem, start, centers, params, step=step, grad_tol=grad_tol)
        record = ToyRound(index, kind, x, problem.objective(x),
                          kind == "restart", False)
        state.rounds.append(record)
        return record

    record = run(1, "unperturbed", x0, ())
    admit(record)
    state.deflation_centers.append(record.x)

    for index in range(2, budget + 1):
        centers = tuple(state.deflation_centers)
        record = run(index, "deflated", x0, centers)
        state.deflation_centers.append(record.x)
        if all(abs(record.x - c) >= params.gamma for c in centers):
            admit(record)
        else:
            state.restarts += 1
            r_record = run(index, "restart", record.x, ())
            admit(r_record)

    return state


def brute_force_minima(problem: ScalarProblem, samples=10000, refine=60):
    """Oracle: all strict local minima located by dense sampling followed
    by ternary refinement inside each bracketing cell."""
    lo, hi = problem.lower, problem.upper
    h = (hi - lo) / samples
    xs = [lo + i * h for i in range(samples + 1)]
    fs = [problem.objective(x) for x in xs]
    minima = []
    for i in range(1, samples):
        if fs[i] <= fs[i - 1] and fs[i] <= fs[i + 1]:
            a, b = xs[i - 1], xs[i + 1]
            for _ in range(refine):
                m1 = a + (b - a) / 3.0
                m2 = b - (b - a) / 3.0
                if problem.objective(m1) <= problem.objective(m2):
                    b = m2
                else:
                    a = m1
            minima.append(0.5 * (a + b))
    return minima
