"""Constrained solvers over the l1 ball: Frank-Wolfe and projected gradient.

Frank-Wolfe touches the constraint set only through the linear minimization
oracle and carries a duality-gap certificate: for convex f and feasible
theta, ``gap = <grad f(theta), theta - s>`` with s the oracle output
upper-bounds ``f(theta) - min f``.  Projected gradient with backtracking is
the cross-check solver; its report carries the same certificate, evaluated
at the final iterate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import glm
from .geometry import lmo_l1_ball, project_l1_ball

FEASIBILITY_TOL = 1e-9


class SolverError(RuntimeError):
    """A solve failed (non-finite values or a step-size underflow)."""


@dataclass(frozen=True)
class SolveReport:
    theta_hat: np.ndarray
    iterations: int
    final_gap: float
    final_objective: float
    method: str


def default_gap_tol(instance: glm.ProblemInstance) -> float:
    """Default certificate tolerance: 1e-6 relative to the starting objective."""
    return 1e-6 * max(1.0, abs(glm.loss(instance, np.zeros(instance.p))))


def duality_gap(instance: glm.ProblemInstance, theta: np.ndarray, c: float) -> float:
    """Frank-Wolfe gap ``<grad f(theta), theta - s>`` at a feasible theta."""
    theta = np.asarray(theta, dtype=float)
    if np.sum(np.abs(theta)) > c + FEASIBILITY_TOL:
        raise ValueError(f"theta is infeasible: ||theta||_1 = {np.sum(np.abs(theta)):.12g} > c = {c:.12g}")
    grad = glm.gradient(instance, theta)
    s = lmo_l1_ball(grad, c)
    return float(grad @ (theta - s))


def frank_wolfe(
    instance: glm.ProblemInstance,
    c: float,
    max_iter: int = 50_000,
    gap_tol: float | None = None,
    line_search: bool = True,
) -> SolveReport:
    """Frank-Wolfe from the origin, stopping when the gap certificate clears.

    With ``line_search`` the gaussian family takes the exact quadratic step;
    the other families start from the curvature-matched step and backtrack.
    Without it the classic ``2 / (k + 2)`` schedule is used.
    """
    if c <= 0:
        raise ValueError("c must be > 0")
    if gap_tol is None:
        gap_tol = default_gap_tol(instance)
    theta = np.zeros(instance.p)
    value = glm.loss(instance, theta)
    gap = np.inf
    k = 0
    for k in range(max_iter):
        grad = glm.gradient(instance, theta)
        if not np.all(np.isfinite(grad)):
            raise SolverError(f"non-finite gradient at iteration {k}")
        s = lmo_l1_ball(grad, c)
        direction = s - theta
        gap = float(grad @ (theta - s))
        if gap <= gap_tol:
            break
        if line_search:
            curvature = glm.hessian_quadratic_form(instance, theta, direction)
            gamma = 1.0 if curvature <= 0 else min(1.0, gap / curvature)
            if instance.family.tag != "gaussian":
                # curvature varies along the segment; backtrack until the
                # quadratic-model decrease is realized
                while gamma > 1e-15:
                    try:
                        candidate = glm.loss(instance, theta + gamma * direction)
                    except ValueError:
                        candidate = np.inf
                    if candidate <= value - 0.5 * gamma * gap + 1e-15 * max(1.0, abs(value)):
                        break
                    gamma *= 0.5
                else:
                    raise SolverError(f"line search underflow at iteration {k}")
        else:
            gamma = 2.0 / (k + 2.0)
        theta = theta + gamma * direction
        value = glm.loss(instance, theta)
        if not np.isfinite(value):
            raise SolverError(f"non-finite objective at iteration {k}")
    else:
        # iteration cap hit after a step: refresh the certificate at the iterate
        grad = glm.gradient(instance, theta)
        gap = float(grad @ (theta - lmo_l1_ball(grad, c)))
    return SolveReport(theta, k, max(gap, 0.0), value, "frank_wolfe")


def projected_gradient(
    instance: glm.ProblemInstance,
    c: float,
    max_iter: int = 20_000,
    tol: float = 1e-10,
    step0: float = 1.0,
) -> SolveReport:
    """Projected gradient with backtracking; stops on a small step.

    Each accepted step satisfies the proximal sufficient-decrease condition,
    so the objective is monotone nonincreasing.  The report's ``final_gap``
    is the Frank-Wolfe certificate at the final iterate.
    """
    if c <= 0:
        raise ValueError("c must be > 0")
    theta = np.zeros(instance.p)
    value = glm.loss(instance, theta)
    eta = step0
    k = 0
    for k in range(max_iter):
        grad = glm.gradient(instance, theta)
        if not np.all(np.isfinite(grad)):
            raise SolverError(f"non-finite gradient at iteration {k}")
        while True:
            candidate = project_l1_ball(theta - eta * grad, c)
            diff = candidate - theta
            try:
                cand_value = glm.loss(instance, candidate)
            except ValueError:
                cand_value = np.inf
            model = value + float(grad @ diff) + float(diff @ diff) / (2.0 * eta)
            if cand_value <= model + 1e-15 * max(1.0, abs(value)):
                break
            eta *= 0.5
            if eta < 1e-18:
                raise SolverError(f"backtracking step underflow at iteration {k}")
        step_size = float(np.linalg.norm(diff))
        theta, value = candidate, cand_value
        eta *= 1.5
        if step_size <= tol * max(1.0, float(np.linalg.norm(theta))):
            break
    gap = duality_gap(instance, theta, c)
    return SolveReport(theta, k, gap, value, "projected_gradient")
