"""Error-bound evaluation: restricted-convexity probes and width-based bounds.

The core chain: restricted strong convexity with parameter mu on the
feasible cone gives the sure inequality
``mu ||theta_hat - theta_true|| <= ||P_K(-grad f_n(theta_true))||``, and in
expectation the projected gradient norm is controlled by the cone's Gaussian
width, giving ``E ||theta_hat - theta_true|| <= 2 sqrt(2 pi) sigma_max
omega_1 / (mu sqrt(n))`` for matched constraints and the t-localized
analogue ``t + 2 sqrt(2 pi) sigma_max omega_1(t) / (mu sqrt(n))`` for
mismatched ones.  Tuning t against the unlocalized width yields the
``n^{-1/4}`` closed-form rate.

mu itself is never observable; :func:`rsc_estimate` reports the minimum and
a low quantile of sampled restricted curvatures as an honest empirical
surrogate, and the theoretical values (``1 - eps`` for the gaussian model,
``nu (1 - eps)`` for bounded-curvature GLMs) are available alongside.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from . import glm
from .geometry import ConeModel, FeasibleSet, WidthEstimate, project_onto_descent_cone

BOUND_CONSTANT = 2.0 * math.sqrt(2.0 * math.pi)

RSC_LAMBDA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class RscEstimate:
    """Empirical restricted-convexity summary over sampled directions.

    ``mu_hat`` is the minimum sampled curvature, ``quantile_mu`` the 1%
    quantile; a finite sample cannot certify an infimum, so both are kept.
    """

    mu_hat: float
    directions_tested: int
    quantile_mu: float
    epsilon: float
    alpha: float

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.alpha < 1.0:
            raise ValueError("alpha must be >= 1")


@dataclass(frozen=True)
class BoundReport:
    """One evaluated error bound and the ingredients that produced it."""

    t: float
    width: WidthEstimate
    mu: float
    sigma_max: float
    n: int
    bound_value: float
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in ("naive", "matched", "mismatched", "optimized_t"):
            raise ValueError(f"unknown bound kind {self.kind!r}")
        if self.kind == "matched" and self.t != 0.0:
            raise ValueError("matched bounds have t = 0")
        if self.bound_value < 0:
            raise ValueError("bound_value must be >= 0")


@dataclass(frozen=True)
class TunedBound:
    """Result of minimizing the mismatched bound over t."""

    t_star: float
    bound_star: float
    width_star: WidthEstimate
    t_closed_form: float
    bound_closed_form: float


def sample_cone_directions(
    cone: ConeModel, num: int, rng: np.random.Generator, batch: int = 512
) -> np.ndarray:
    """Unit directions in the cone: project gaussians, drop zeros, normalize.

    Returns an array of shape (p, num) with unit columns.
    """
    collected: list[np.ndarray] = []
    have = 0
    while have < num:
        H = rng.standard_normal((batch, cone.ambient_dim))
        proj, norms = cone.project_batch(H)
        keep = norms > 1e-12
        if np.any(keep):
            unit = proj[keep] / norms[keep, None]
            collected.append(unit)
            have += unit.shape[0]
    return np.concatenate(collected, axis=0)[:num].T


def sample_localized_directions(
    fset: FeasibleSet,
    t: float,
    num: int,
    rng: np.random.Generator,
    batch: int = 512,
    max_batches: int = 200,
) -> np.ndarray:
    """Unit directions in the cone of ``F \\ tB``.

    Draws points of F (projections of gaussians at several scales), keeps
    those with norm at least t, and normalizes.  Because F is star-shaped
    around the origin, each kept direction e satisfies ``t e in F`` and
    therefore lies in the conic hull of ``F \\ tB``.
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    collected: list[np.ndarray] = []
    have = 0
    scale = fset.radius_c
    for _ in range(max_batches):
        if have >= num:
            break
        magnitudes = scale * 10.0 ** rng.uniform(-1.5, 0.5, size=batch)
        Z = rng.standard_normal((batch, fset.ambient_dim)) * magnitudes[:, None]
        X = fset.project_rows(Z)
        norms = np.linalg.norm(X, axis=1)
        keep = norms >= t
        if np.any(keep):
            unit = X[keep] / norms[keep, None]
            collected.append(unit)
            have += unit.shape[0]
    if have < max(2, num // 20):
        raise ValueError(
            f"could not sample directions from the localized set at t = {t:.6g}; "
            f"accepted {have} of {num} requested (is t larger than the set radius?)"
        )
    out = np.concatenate(collected, axis=0)[:num].T if have >= num else np.concatenate(collected, axis=0).T
    return out


def rsc_estimate(
    instance: glm.ProblemInstance,
    directions,
    num_directions: int = 2000,
    at_truth_segment: bool = False,
    epsilon: float = 0.5,
    alpha: float = 1.0,
    rng: np.random.Generator | None = None,
) -> RscEstimate:
    """Probe restricted strong convexity over sampled unit directions.

    ``directions`` is a :class:`ConeModel` (directions sampled from the
    cone), a callable ``(rng, num) -> (p, num)`` array of unit columns, or a
    ready (p, num) array.  Per direction e the probed curvature is either
    the segment form ``min over a lambda grid of e^T Hess f(theta + lambda e) e``
    (``at_truth_segment=True``) or the secant form
    ``<grad f(theta + e) - grad f(theta), e>``.
    """
    if num_directions < 100:
        raise ValueError("num_directions must be >= 100")
    if isinstance(directions, ConeModel):
        if rng is None:
            raise ValueError("sampling from a cone requires an rng")
        E = sample_cone_directions(directions, num_directions, rng)
    elif callable(directions):
        if rng is None:
            raise ValueError("sampling from a callable requires an rng")
        E = np.asarray(directions(rng, num_directions), dtype=float)
    else:
        E = np.asarray(directions, dtype=float)
    if E.ndim != 2 or E.shape[0] != instance.p or E.shape[1] == 0:
        raise ValueError(f"directions must form a ({instance.p}, m) array with m >= 1")
    if at_truth_segment:
        q = None
        for lam in RSC_LAMBDA_GRID:
            q_lam = glm.segment_quadratic_form_batch(instance, instance.theta_true, E, lam)
            q = q_lam if q is None else np.minimum(q, q_lam)
    else:
        q = glm.secant_form_batch(instance, instance.theta_true, E)
    return RscEstimate(
        mu_hat=float(np.min(q)),
        directions_tested=int(E.shape[1]),
        quantile_mu=float(np.quantile(q, 0.01)),
        epsilon=epsilon,
        alpha=alpha,
    )


def realized_secant_form(instance: glm.ProblemInstance, e: np.ndarray) -> float:
    """Secant curvature ``<grad f(theta + e) - grad f(theta), e> / ||e||^2``."""
    e = np.asarray(e, dtype=float)
    return float(glm.secant_form_batch(instance, instance.theta_true, e[:, None])[0])


def sample_size_threshold(width1: float, epsilon: float, alpha: float, c1: float) -> int:
    """Smallest n clearing ``sqrt(n) >= c1 alpha^2 width1 / epsilon`` (floored at 1)."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if alpha < 1.0:
        raise ValueError("alpha must be >= 1")
    if c1 <= 0:
        raise ValueError("c1 must be > 0")
    if width1 < 0:
        raise ValueError("width1 must be >= 0")
    return max(1, int(math.ceil((c1 * alpha**2 * width1 / epsilon) ** 2)))


def naive_bound(mu: float, grad_norm_expectation: float) -> float:
    """Unrefined bound ``E ||grad f_n(theta_true)|| / mu``."""
    if mu <= 0:
        raise ValueError("mu must be > 0")
    return grad_norm_expectation / mu


def projected_gradient_norm_at_truth(instance: glm.ProblemInstance, cone: ConeModel) -> float:
    """``||P_K(-grad f_n(theta_true))||`` for a matched descent cone."""
    grad = glm.gradient(instance, instance.theta_true)
    _, norm = project_onto_descent_cone(cone, -grad)
    return norm


def matched_bound(sigma_max: float, width1: float, mu: float, n: int) -> float:
    """``2 sqrt(2 pi) sigma_max width1 / (mu sqrt(n))``."""
    if mu <= 0:
        raise ValueError("mu must be > 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    return BOUND_CONSTANT * sigma_max * width1 / (mu * math.sqrt(n))


def mismatched_bound(t: float, sigma_max: float, localized_width1: float, mu: float, n: int) -> float:
    """``t + 2 sqrt(2 pi) sigma_max omega_1(t) / (mu sqrt(n))``; t = 0 recovers the matched bound."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return t + matched_bound(sigma_max, localized_width1, mu, n)


def bound_report(
    kind: str, t: float, width: WidthEstimate, mu: float, sigma_max: float, n: int
) -> BoundReport:
    """Evaluate a matched/mismatched bound with its ingredients attached."""
    if kind == "matched":
        if t != 0.0:
            raise ValueError("matched bounds have t = 0")
        value = matched_bound(sigma_max, width.mean, mu, n)
    elif kind in ("mismatched", "optimized_t"):
        value = mismatched_bound(t, sigma_max, width.mean, mu, n)
    else:
        raise ValueError(f"unknown bound kind {kind!r}")
    return BoundReport(t=t, width=width, mu=mu, sigma_max=sigma_max, n=n, bound_value=value, kind=kind)


def optimize_t(
    width_of_t: Callable[[float], WidthEstimate],
    global_width: float,
    sigma_max: float,
    mu: float,
    n: int,
    t_grid,
) -> TunedBound:
    """Minimize the mismatched bound over a t grid.

    Also reports the closed-form relaxation obtained by replacing the
    localized width with ``global_width / t``: the bound
    ``t + C global_width / (t sqrt(n))`` with ``C = 2 sqrt(2 pi) sigma_max / mu``
    is minimized at ``t* = sqrt(C global_width / sqrt(n))`` with value
    ``2 t*``, which decays like ``n^{-1/4}``.
    """
    t_grid = [float(t) for t in t_grid]
    if not t_grid or any(t <= 0 for t in t_grid):
        raise ValueError("t_grid must be nonempty with positive entries")
    if mu <= 0:
        raise ValueError("mu must be > 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    best_t = None
    best_value = math.inf
    best_width = None
    for t in t_grid:
        estimate = width_of_t(t)
        value = mismatched_bound(t, sigma_max, estimate.mean, mu, n)
        if value < best_value:
            best_t, best_value, best_width = t, value, estimate
    coef = BOUND_CONSTANT * sigma_max / mu
    t_cf = math.sqrt(coef * global_width / math.sqrt(n))
    return TunedBound(best_t, best_value, best_width, t_cf, 2.0 * t_cf)


def calibrate_c1(
    width1: float,
    success: Callable[[int, int], bool],
    seeds: int = 100,
    epsilon: float = 0.5,
    alpha: float = 1.0,
    c1_start: float = 0.25,
    growth: float = 1.5,
    target_rate: float = 0.95,
    c1_cap: float = 64.0,
) -> float:
    """Grow c1 until the RSC success rate at the threshold sample size clears the target.

    ``success(n, seed)`` must report whether the restricted-convexity check
    passed for one seeded draw at sample size n.  The theory guarantees only
    that some constant works; this pins a concrete, reproducible value.
    """
    c1 = c1_start
    while c1 <= c1_cap:
        n = sample_size_threshold(width1, epsilon, alpha, c1)
        hits = sum(1 for seed in range(seeds) if success(n, seed))
        if hits >= target_rate * seeds:
            return c1
        c1 *= growth
    raise RuntimeError(
        f"calibration failed: success rate below {target_rate:.0%} even at c1 = {c1_cap}"
    )
