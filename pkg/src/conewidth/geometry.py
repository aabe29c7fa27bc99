"""Feasible sets, descent cones, and Monte-Carlo Gaussian-width estimators.

Geometry conventions used throughout:

* The constraint set is the l1 ball ``{theta : ||theta||_1 <= c}``.  The
  feasible set at the true parameter is its translate ``F = G - theta_true``.
* The descent cone of the l1 norm at a boundary point with support S and
  sign pattern s is ``K = {v : sum_{i in S} s_i v_i + sum_{i not in S} |v_i| <= 0}``.
* Its polar is the conic hull of the l1 subdifferential:
  ``K° = {u : u_i = tau * s_i on S, |u_i| <= tau off S, tau >= 0}``.
  Projecting onto K° reduces to a one-dimensional convex problem in tau, and
  the projection onto K follows from the Moreau decomposition
  ``h = P_K(h) + P_K°(h)`` with the two parts orthogonal.
* Per-sample width statistics use ``||P_K(h)||_2``, i.e. a sup over the unit
  sphere section that would be negative is recorded as zero.
* Localized widths maximize over the intersection with the l2 *ball* of
  radius t rather than the sphere; the ball version upper-bounds the sphere
  version and keeps the inner problem convex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MATCHED_TOL = 1e-12

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class ConvergenceError(RuntimeError):
    """Iterative projection failed to converge within its iteration cap."""


@dataclass(frozen=True)
class WidthEstimate:
    """Monte-Carlo width estimate with its standard error."""

    mean: float
    stderr: float
    samples: int

    @classmethod
    def from_samples(cls, values: np.ndarray) -> "WidthEstimate":
        values = np.asarray(values, dtype=float)
        m = values.size
        if m < 2:
            raise ValueError("need at least 2 samples for a width estimate")
        return cls(float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(m)), m)


def _golden_section_rows(f, lo: np.ndarray, hi: np.ndarray, iters: int):
    """Vectorized golden-section minimization over per-row brackets.

    ``f`` maps a vector of abscissae (one per row) to objective values.
    Returns ``(lo, hi, best)`` where best is the smallest value evaluated.
    """
    width = hi - lo
    x1 = hi - _INVPHI * width
    x2 = lo + _INVPHI * width
    f1 = f(x1)
    f2 = f(x2)
    best = np.minimum(f1, f2)
    for _ in range(iters):
        take_low = f1 <= f2
        hi = np.where(take_low, x2, hi)
        lo = np.where(take_low, lo, x1)
        x_keep = np.where(take_low, x1, x2)
        f_keep = np.where(take_low, f1, f2)
        width = hi - lo
        x_eval = np.where(take_low, hi - _INVPHI * width, lo + _INVPHI * width)
        f_eval = f(x_eval)
        best = np.minimum(best, f_eval)
        x1 = np.where(take_low, x_eval, x_keep)
        f1 = np.where(take_low, f_eval, f_keep)
        x2 = np.where(take_low, x_keep, x_eval)
        f2 = np.where(take_low, f_keep, f_eval)
    return lo, hi, best


@dataclass(frozen=True, eq=False)
class ConeModel:
    """Descent cone of the l1 norm at a sparse boundary point.

    Membership: ``v in K  iff  sum_{i in S} sign_i v_i + sum_{i not in S} |v_i| <= 0``.
    """

    support: np.ndarray
    signs: np.ndarray
    ambient_dim: int
    _off_support: np.ndarray = field(init=False, repr=False, compare=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConeModel):
            return NotImplemented
        return (
            self.ambient_dim == other.ambient_dim
            and np.array_equal(self.support, other.support)
            and np.array_equal(self.signs, other.signs)
        )

    def __post_init__(self) -> None:
        support = np.asarray(self.support, dtype=int)
        signs = np.asarray(self.signs, dtype=float)
        p = int(self.ambient_dim)
        if support.ndim != 1 or signs.shape != support.shape:
            raise ValueError("support and signs must be 1-D arrays of equal length")
        if support.size == 0:
            raise ValueError("support must be nonempty")
        if np.unique(support).size != support.size:
            raise ValueError("support indices must be distinct")
        if np.any(support < 0) or np.any(support >= p):
            raise ValueError("support indices out of range")
        if not np.all(np.abs(signs) == 1.0):
            raise ValueError("signs must be +1 or -1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "signs", signs)
        mask = np.ones(p, dtype=bool)
        mask[support] = False
        object.__setattr__(self, "_off_support", np.nonzero(mask)[0])

    def margin(self, v: np.ndarray) -> float:
        """Membership margin; nonpositive iff v lies in the cone."""
        v = np.asarray(v, dtype=float)
        return float(self.signs @ v[self.support] + np.sum(np.abs(v[self._off_support])))

    def contains(self, v: np.ndarray, tol: float = 0.0) -> bool:
        return self.margin(v) <= tol

    def project_batch(self, H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project the rows of H onto the cone; returns (projections, norms)."""
        H = np.atleast_2d(np.asarray(H, dtype=float))
        tau = _polar_tau_batch(self, H)
        polar = np.zeros_like(H)
        polar[:, self.support] = tau[:, None] * self.signs[None, :]
        off = self._off_support
        if off.size:
            polar[:, off] = np.clip(H[:, off], -tau[:, None], tau[:, None])
        proj = H - polar
        return proj, np.linalg.norm(proj, axis=1)


def descent_cone(theta_true: np.ndarray) -> ConeModel:
    """Descent cone of the l1 norm at theta_true (which must be nonzero)."""
    theta_true = np.asarray(theta_true, dtype=float)
    support = np.nonzero(theta_true)[0]
    if support.size == 0:
        raise ValueError(
            "descent cone at zero is the whole space; use the mismatched machinery instead"
        )
    return ConeModel(support, np.sign(theta_true[support]), theta_true.size)


def _polar_distance_sq(cone: ConeModel, H: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Squared distance from each row of H to the tau-slice of the polar cone."""
    on = (H[:, cone.support] - tau[:, None] * cone.signs[None, :]) ** 2
    total = on.sum(axis=1)
    off = cone._off_support
    if off.size:
        excess = np.maximum(np.abs(H[:, off]) - tau[:, None], 0.0)
        total = total + (excess**2).sum(axis=1)
    return total


def _polar_tau_batch(cone: ConeModel, H: np.ndarray) -> np.ndarray:
    """Per-row minimizer over tau >= 0 of the polar slice distance.

    The squared distance is convex and piecewise quadratic in tau with
    breakpoints at the off-support magnitudes, so the minimizer is found
    exactly: on the segment where the k largest off-support magnitudes
    exceed tau, the stationary point averages the on-support targets with
    those k magnitudes, and exactly one segment contains its own stationary
    point (otherwise the minimizer is tau = 0).
    """
    m = H.shape[0]
    s_count = cone.support.size
    on_target = H[:, cone.support] @ cone.signs
    off = cone._off_support
    if off.size == 0:
        return np.maximum(on_target / s_count, 0.0)
    a = np.sort(np.abs(H[:, off]), axis=1)[:, ::-1]
    q = a.shape[1]
    prefix = np.concatenate([np.zeros((m, 1)), np.cumsum(a, axis=1)], axis=1)
    counts = s_count + np.arange(q + 1, dtype=float)
    tau_k = (on_target[:, None] + prefix) / counts[None, :]
    upper = np.concatenate([np.full((m, 1), np.inf), a], axis=1)
    lower = np.concatenate([a, np.zeros((m, 1))], axis=1)
    feasible = (tau_k <= upper * (1.0 + 1e-12) + 1e-12) & (tau_k >= lower * (1.0 - 1e-12) - 1e-12)
    found = feasible.any(axis=1)
    k_idx = np.argmax(feasible, axis=1)
    tau = tau_k[np.arange(m), k_idx]
    # no self-consistent segment means the unconstrained root is negative
    return np.where(found, np.maximum(tau, 0.0), 0.0)


def project_onto_descent_cone(cone: ConeModel, h: np.ndarray) -> tuple[np.ndarray, float]:
    """Euclidean projection of h onto the cone, with its norm."""
    proj, norms = cone.project_batch(np.asarray(h, dtype=float)[None, :])
    return proj[0], float(norms[0])


# ---------------------------------------------------------------------------
# l1-ball primitives
# ---------------------------------------------------------------------------


def project_l1_ball(x: np.ndarray, c: float) -> np.ndarray:
    """Euclidean projection onto ``{v : ||v||_1 <= c}`` by soft thresholding."""
    if c <= 0:
        raise ValueError("c must be > 0")
    x = np.asarray(x, dtype=float)
    return project_l1_ball_rows(x[None, :], c)[0]


def project_l1_ball_rows(X: np.ndarray, c: float) -> np.ndarray:
    """Row-wise l1-ball projection (vectorized soft thresholding)."""
    if c <= 0:
        raise ValueError("c must be > 0")
    X = np.asarray(X, dtype=float)
    absX = np.abs(X)
    inside = absX.sum(axis=1) <= c
    if np.all(inside):
        return X.copy()
    u = np.sort(absX, axis=1)[:, ::-1]
    cs = np.cumsum(u, axis=1)
    ranks = np.arange(1, X.shape[1] + 1)
    positive = u - (cs - c) / ranks > 0
    k = positive.sum(axis=1) - 1  # last prefix index with a positive gap
    lam = (cs[np.arange(X.shape[0]), k] - c) / (k + 1)
    lam = np.where(inside, 0.0, np.maximum(lam, 0.0))
    return np.sign(X) * np.maximum(absX - lam[:, None], 0.0)


def lmo_l1_ball(grad: np.ndarray, c: float) -> np.ndarray:
    """Linear minimization oracle over the l1 ball.

    Returns ``-c * sign(grad_i*) e_i*`` with ``i* = argmax |grad_i|``; ties
    break to the lowest index, and a zero entry counts as positive sign.
    """
    if c <= 0:
        raise ValueError("c must be > 0")
    grad = np.asarray(grad, dtype=float)
    i = int(np.argmax(np.abs(grad)))
    out = np.zeros_like(grad)
    out[i] = -c if grad[i] >= 0 else c
    return out


# ---------------------------------------------------------------------------
# Feasible sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeasibleSet:
    """The translated constraint set ``F = {v : ||theta_true + v||_1 <= c}``.

    ``classification`` is derived: matched iff ``||theta_true||_1 == c`` to
    within ``MATCHED_TOL``.
    """

    theta_true: np.ndarray
    radius_c: float
    classification: str = field(init=False)

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta_true, dtype=float)
        object.__setattr__(self, "theta_true", theta)
        norm1 = float(np.sum(np.abs(theta)))
        if self.radius_c <= 0:
            raise ValueError("radius_c must be > 0")
        if norm1 > self.radius_c + MATCHED_TOL:
            raise ValueError(
                f"theta_true is infeasible: ||theta||_1 = {norm1:.6g} > c = {self.radius_c:.6g}"
            )
        matched = abs(norm1 - self.radius_c) <= MATCHED_TOL
        object.__setattr__(self, "classification", "matched" if matched else "mismatched")

    @property
    def ambient_dim(self) -> int:
        return self.theta_true.size

    def contains(self, v: np.ndarray, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        return float(np.sum(np.abs(self.theta_true + v))) <= self.radius_c + tol

    def project(self, x: np.ndarray) -> np.ndarray:
        """Projection onto F (a shifted l1-ball projection)."""
        shifted = np.asarray(x, dtype=float) + self.theta_true
        return project_l1_ball(shifted, self.radius_c) - self.theta_true

    def project_rows(self, X: np.ndarray) -> np.ndarray:
        shifted = np.asarray(X, dtype=float) + self.theta_true[None, :]
        return project_l1_ball_rows(shifted, self.radius_c) - self.theta_true[None, :]

    def support_value(self, h: np.ndarray) -> float:
        """``sup_{v in F} <h, v> = c ||h||_inf - <h, theta_true>``."""
        h = np.asarray(h, dtype=float)
        return float(self.radius_c * np.max(np.abs(h)) - h @ self.theta_true)


# ---------------------------------------------------------------------------
# Width estimators
# ---------------------------------------------------------------------------


def gaussian_width_cone(cone, samples: int, rng: np.random.Generator) -> WidthEstimate:
    """Monte-Carlo width of a cone: mean of ``||P_K(h)||`` over gaussian h.

    ``cone`` is anything with ``ambient_dim`` and ``project_batch`` (normally
    a :class:`ConeModel`).  When the projection is nonzero its norm equals
    the sup of ``<h, v>`` over unit cone members; a zero projection
    contributes 0.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    H = rng.standard_normal((samples, cone.ambient_dim))
    _, norms = cone.project_batch(H)
    return WidthEstimate.from_samples(norms)


def _dykstra_project(
    x0: np.ndarray,
    project_a,
    project_b,
    tol: float = 1e-8,
    max_iter: int = 5000,
) -> np.ndarray:
    """Dykstra's alternating projections onto the intersection of two sets.

    The convergence residual is the size of the correction increments
    (``x_k - y_k`` and ``y_k - x_{k+1}``), not the change in the iterate:
    the iterate can sit still for several cycles while the corrections are
    still being built up.
    """
    x = np.asarray(x0, dtype=float).copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    residual = math.inf
    for _ in range(max_iter):
        y = project_a(x + p)
        p = x + p - y
        x_new = project_b(y + q)
        q = y + q - x_new
        residual = float(max(np.max(np.abs(x - y)), np.max(np.abs(y - x_new))))
        x = x_new
        if residual <= tol:
            return x
    raise ConvergenceError(
        f"Dykstra projection did not converge within {max_iter} iterations "
        f"(last residual {residual:.3e}, tolerance {tol:.1e})"
    )


def sup_linear_over_localized_set(
    h: np.ndarray,
    fset: FeasibleSet,
    t: float,
    max_iter: int = 500,
    dykstra_tol: float = 1e-8,
    dykstra_max_iter: int = 20_000,
) -> float:
    """Maximize ``<h, v>`` over ``F ∩ tB`` by projected ascent.

    Each ascent step projects onto the intersection of the shifted l1 ball
    and the l2 ball with Dykstra's alternating projections.  The objective is
    linear, so the iteration is monotone and converges to the supremum; the
    step is a generous multiple of the set radius (a fixed-step ascent on a
    linear objective has value gap on the order of diameter^2 / (step *
    iterations)), and the loop exits once improvements stall.
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    h = np.asarray(h, dtype=float)
    hnorm = float(np.linalg.norm(h))
    if hnorm == 0.0:
        return 0.0

    def project_ball(x: np.ndarray) -> np.ndarray:
        nx = float(np.linalg.norm(x))
        return x if nx <= t else x * (t / nx)

    step = 64.0 * t / hnorm
    v = np.zeros_like(h)
    best = 0.0
    stall_tol = 1e-11 * max(1.0, t * hnorm)
    stalls = 0
    for _ in range(max_iter):
        v = _dykstra_project(v + step * h, fset.project, project_ball, dykstra_tol, dykstra_max_iter)
        value = float(h @ v)
        if value > best + stall_tol:
            stalls = 0
        else:
            stalls += 1
        best = max(best, value)
        if stalls >= 3:
            break
    return best


def _sup_localized_dual_rows(H: np.ndarray, fset: FeasibleSet, t: float) -> np.ndarray:
    """Row-wise ``sup {<h, v> : v in F, ||v|| <= t}`` via the 1-D Lagrangian dual.

    With multiplier ``lam >= 0`` on the squared-norm constraint, the inner
    maximizer over F is ``P_F(h / (2 lam))``, so each dual evaluation
    ``g(lam) = <h, v*> - lam ||v*||^2 + lam t^2`` costs one shifted l1-ball
    projection.  g is convex with its minimizer in ``[0, ||h|| / (2t)]``
    (because 0 lies in F), and strong duality makes the minimum equal the
    primal supremum.  Golden-section search over lam, with the closed form
    ``g(0) = sup_F <h, v>`` as an endpoint candidate.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    out = np.zeros(H.shape[0])
    hnorm = np.linalg.norm(H, axis=1)
    live = hnorm > 0
    if not np.any(live):
        return out
    Hl = H[live]

    def g(lam: np.ndarray) -> np.ndarray:
        lam_safe = np.maximum(lam, 1e-300)
        V = fset.project_rows(Hl / (2.0 * lam_safe[:, None]))
        return (
            np.einsum("ij,ij->i", Hl, V)
            - lam * np.einsum("ij,ij->i", V, V)
            + lam * t * t
        )

    lo = np.zeros(Hl.shape[0])
    hi = hnorm[live] / (2.0 * t)
    # bracket down to ~1e-12 of its initial span
    iters = 2 + int(math.ceil(math.log(1e-12) / math.log(_INVPHI)))
    _, _, best = _golden_section_rows(g, lo, hi, iters)
    g0 = fset.radius_c * np.max(np.abs(Hl), axis=1) - Hl @ fset.theta_true
    best = np.minimum(best, g0)
    out[live] = np.maximum(best, 0.0)
    return out


def localized_width(
    fset: FeasibleSet,
    t: float,
    samples: int,
    rng: np.random.Generator,
    method: str = "dual",
    max_iter: int = 500,
) -> WidthEstimate:
    """Monte-Carlo estimate of ``E sup {<h, v> : v in F ∩ tB} / t``.

    For matched constraints and t no larger than the smallest nonzero entry
    of theta_true, the localized set coincides with the descent cone's
    t-ball section, so the estimate agrees with :func:`gaussian_width_cone`
    and is independent of t.

    ``method`` selects the inner maximizer: ``"dual"`` (default; exact via
    Lagrangian duality, vectorized over samples) or ``"pga"`` (projected
    gradient ascent with Dykstra projections; slower, kept as a cross-check).
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    if t <= 0:
        raise ValueError("t must be > 0")
    H = rng.standard_normal((samples, fset.ambient_dim))
    if method == "dual":
        sups = _sup_localized_dual_rows(H, fset, t)
    elif method == "pga":
        sups = np.array([sup_linear_over_localized_set(h, fset, t, max_iter) for h in H])
    else:
        raise ValueError(f"unknown method {method!r}; expected 'dual' or 'pga'")
    return WidthEstimate.from_samples(sups / t)


def global_width_l1(fset: FeasibleSet, samples: int, rng: np.random.Generator) -> WidthEstimate:
    """Monte-Carlo estimate of the unlocalized width ``E sup_{v in F} <h, v>``."""
    if samples < 2:
        raise ValueError("samples must be >= 2")
    H = rng.standard_normal((samples, fset.ambient_dim))
    values = fset.radius_c * np.max(np.abs(H), axis=1) - H @ fset.theta_true
    return WidthEstimate.from_samples(values)
