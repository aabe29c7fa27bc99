"""Cone geometry: projections, Moreau decomposition, width estimators."""

import math

import numpy as np
import pytest

from conewidth import geometry
from conewidth.geometry import (
    ConeModel,
    ConvergenceError,
    FeasibleSet,
    WidthEstimate,
    descent_cone,
    gaussian_width_cone,
    global_width_l1,
    lmo_l1_ball,
    localized_width,
    project_l1_ball,
    project_onto_descent_cone,
    sup_linear_over_localized_set,
)
from conewidth.rng import stream

from oracles import (
    cone_projection_angle_oracle,
    cone_width_rejection_oracle,
    grid_min_distance_l1_ball,
    sup_localized_p2_oracle,
)


def random_cone(rng, p=None):
    p = p or int(rng.integers(2, 30))
    s = int(rng.integers(1, p + 1))
    support = rng.choice(p, size=s, replace=False)
    signs = 2.0 * rng.integers(0, 2, size=s).astype(float) - 1.0
    return ConeModel(support, signs, p)


class TestProjectL1Ball:
    def test_axis_point(self):
        assert np.allclose(project_l1_ball(np.array([2.0, 0.0]), 1.0), [1.0, 0.0])

    def test_interior_point_unchanged(self):
        assert np.allclose(project_l1_ball(np.array([1.0, 1.0]), 2.0), [1.0, 1.0])

    def test_derived_example_against_grid(self):
        x = np.array([3.0, 1.0])
        proj = project_l1_ball(x, 2.0)
        oracle = grid_min_distance_l1_ball(x, 2.0)
        assert np.linalg.norm(proj - oracle) < 5e-3
        assert np.allclose(proj, [2.0, 0.0], atol=1e-12)

    def test_feasibility_and_optimality_vs_random_points(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            p = int(rng.integers(2, 15))
            c = float(rng.uniform(0.5, 3.0))
            x = rng.normal(scale=2.0, size=p)
            proj = project_l1_ball(x, c)
            assert np.sum(np.abs(proj)) <= c + 1e-10
            d_proj = np.linalg.norm(proj - x)
            # any feasible point must be at least as far from x
            Z = rng.normal(size=(1000, p))
            Z *= (c * rng.random(1000) / np.maximum(np.sum(np.abs(Z), axis=1), 1e-12))[:, None]
            assert np.all(np.linalg.norm(Z - x[None, :], axis=1) >= d_proj - 1e-10)

    def test_rows_variant_matches_vector(self):
        rng = np.random.default_rng(22)
        X = rng.normal(scale=2.0, size=(40, 7))
        rows = geometry.project_l1_ball_rows(X, 1.3)
        for i in range(40):
            assert np.allclose(rows[i], project_l1_ball(X[i], 1.3), atol=1e-14)

    def test_invalid_radius(self):
        with pytest.raises(ValueError):
            project_l1_ball(np.array([1.0]), 0.0)


class TestLmo:
    def test_basic(self):
        assert np.allclose(lmo_l1_ball(np.array([3.0, -1.0]), 2.0), [-2.0, 0.0])

    def test_negative_entry(self):
        assert np.allclose(lmo_l1_ball(np.array([0.0, -5.0]), 1.0), [0.0, 1.0])

    def test_tie_breaks_to_lowest_index(self):
        assert np.allclose(lmo_l1_ball(np.array([1.0, 1.0]), 1.0), [-1.0, 0.0])

    def test_minimizes_linear_functional(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            g = rng.normal(size=6)
            s = lmo_l1_ball(g, 1.7)
            Z = rng.normal(size=(500, 6))
            Z *= (1.7 / np.sum(np.abs(Z), axis=1))[:, None]
            assert g @ s <= np.min(Z @ g) + 1e-12


class TestDescentCone:
    def test_membership_examples(self):
        cone = descent_cone(np.array([1.0, 0.0]))
        assert cone.contains(np.array([-1.0, 0.5]))
        assert not cone.contains(np.array([0.0, 1.0]))

    def test_signs_and_support(self):
        cone = descent_cone(np.array([-2.0, 0.0, 0.0]))
        assert cone.support.tolist() == [0]
        assert cone.signs.tolist() == [-1.0]

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError, match="mismatched"):
            descent_cone(np.zeros(4))

    def test_model_validation(self):
        with pytest.raises(ValueError, match="distinct"):
            ConeModel(np.array([0, 0]), np.array([1.0, 1.0]), 3)
        with pytest.raises(ValueError, match="range"):
            ConeModel(np.array([5]), np.array([1.0]), 3)
        with pytest.raises(ValueError, match="signs"):
            ConeModel(np.array([0]), np.array([0.5]), 3)
        with pytest.raises(ValueError, match="nonempty"):
            ConeModel(np.array([], dtype=int), np.array([]), 3)


class TestConeProjection:
    def test_polar_direction_annihilated(self):
        cone = descent_cone(np.array([1.0, 0.0]))
        proj, norm = project_onto_descent_cone(cone, np.array([1.0, 0.0]))
        assert norm == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(proj, 0.0, atol=1e-12)

    def test_cone_member_fixed(self):
        cone = descent_cone(np.array([1.0, 0.0]))
        proj, norm = project_onto_descent_cone(cone, np.array([-1.0, 0.0]))
        assert norm == pytest.approx(1.0)
        assert np.allclose(proj, [-1.0, 0.0], atol=1e-12)

    def test_derived_example(self):
        cone = descent_cone(np.array([1.0, 0.0]))
        proj, norm = project_onto_descent_cone(cone, np.array([0.0, 1.0]))
        assert np.allclose(proj, [-0.5, 0.5], atol=1e-10)
        assert norm == pytest.approx(math.sqrt(0.5), abs=1e-10)

    def test_against_angle_oracle_p2(self):
        rng = np.random.default_rng(24)
        for theta in (np.array([1.0, 0.0]), np.array([-0.5, 0.0]), np.array([2.0, -1.0])):
            cone = descent_cone(theta)
            for _ in range(15):
                h = rng.normal(size=2) * rng.uniform(0.5, 3.0)
                proj, norm = project_onto_descent_cone(cone, h)
                oracle_proj, oracle_norm = cone_projection_angle_oracle(cone, h)
                assert norm == pytest.approx(oracle_norm, abs=1e-4)
                assert np.linalg.norm(proj - oracle_proj) < 1e-4

    def test_moreau_decomposition(self):
        rng = np.random.default_rng(25)
        for _ in range(200):
            cone = random_cone(rng)
            h = rng.normal(size=cone.ambient_dim) * rng.uniform(0.1, 5.0)
            proj, norm = project_onto_descent_cone(cone, h)
            polar = h - proj
            assert abs(proj @ polar) <= 1e-8
            assert abs(h @ h - proj @ proj - polar @ polar) <= 1e-8
            # projection lands in the cone, and is optimal among cone members
            assert cone.margin(proj) <= 1e-9
            assert abs((h - proj) @ proj) <= 1e-8

    def test_polar_tau_is_a_minimum(self):
        rng = np.random.default_rng(27)
        for _ in range(50):
            cone = random_cone(rng, p=12)
            H = rng.normal(size=(1, 12)) * rng.uniform(0.2, 4.0)
            tau = geometry._polar_tau_batch(cone, H)
            base = geometry._polar_distance_sq(cone, H, tau)
            for delta in (1e-7, -1e-7, 1e-3, -1e-3):
                shifted = np.maximum(tau + delta, 0.0)
                assert geometry._polar_distance_sq(cone, H, shifted) >= base - 1e-12

    def test_projection_beats_cone_members(self):
        rng = np.random.default_rng(26)
        for _ in range(30):
            cone = random_cone(rng, p=6)
            h = rng.normal(size=6)
            proj, _ = project_onto_descent_cone(cone, h)
            d = np.linalg.norm(h - proj)
            # random cone members: project random vectors, keep them
            Z = rng.normal(size=(400, 6))
            members, _ = cone.project_batch(Z)
            dists = np.linalg.norm(members - h[None, :], axis=1)
            assert np.all(dists >= d - 1e-9)


class TestWidthEstimators:
    def test_line_cone(self):
        class Line:
            ambient_dim = 4

            def project_batch(self, H):
                proj = np.zeros_like(H)
                proj[:, 0] = H[:, 0]
                return proj, np.abs(H[:, 0])

        w = gaussian_width_cone(Line(), 20_000, stream(27, "w"))
        assert abs(w.mean - math.sqrt(2.0 / math.pi)) <= 3 * w.stderr

    def test_full_space_p2(self):
        class Full:
            ambient_dim = 2

            def project_batch(self, H):
                return H, np.linalg.norm(H, axis=1)

        w = gaussian_width_cone(Full(), 20_000, stream(28, "w"))
        assert abs(w.mean - math.sqrt(math.pi / 2.0)) <= 3 * w.stderr

    def test_descent_cone_vs_rejection_oracle_p2(self):
        cone = descent_cone(np.array([1.0, 0.0]))
        w = gaussian_width_cone(cone, 20_000, stream(29, "w"))
        rng = np.random.default_rng(30)
        sups = cone_width_rejection_oracle(cone, 20_000, 4000, rng)
        oracle_mean = float(np.mean(sups))
        oracle_stderr = float(np.std(sups, ddof=1) / math.sqrt(sups.size))
        assert abs(w.mean - oracle_mean) <= 3 * math.hypot(w.stderr, oracle_stderr)

    def test_scale_freeness(self):
        theta = np.array([0.0, 1.5, 0.0, -0.2, 0.0])
        assert descent_cone(theta) == descent_cone(3.0 * theta)
        w1 = gaussian_width_cone(descent_cone(theta), 5000, stream(31, "w"))
        w2 = gaussian_width_cone(descent_cone(3.0 * theta), 5000, stream(31, "w"))
        assert w1 == w2

    def test_sparsity_width_bound(self):
        rng = stream(32, "w")
        p, s = 100, 2
        theta = np.zeros(p)
        theta[:s] = 1.0
        w = gaussian_width_cone(descent_cone(theta), 8000, rng)
        limit = 2 * s * math.log(p / s) + 1.5 * s + 4 * w.stderr * w.mean
        assert w.mean**2 <= limit

    def test_width_estimate_validation(self):
        with pytest.raises(ValueError):
            WidthEstimate.from_samples(np.array([1.0]))
        w = WidthEstimate.from_samples(np.array([1.0, 2.0, 3.0]))
        assert w.stderr >= 0.0 and w.samples == 3


class TestFeasibleSet:
    def test_classification(self):
        theta = np.array([1.0, -2.0, 0.0])
        assert FeasibleSet(theta, 3.0).classification == "matched"
        assert FeasibleSet(theta, 3.5).classification == "mismatched"

    def test_infeasible_truth_rejected(self):
        with pytest.raises(ValueError, match="infeasible"):
            FeasibleSet(np.array([2.0, 0.0]), 1.0)

    def test_projection_into_set(self):
        fset = FeasibleSet(np.array([0.5, -0.5]), 2.0)
        rng = np.random.default_rng(33)
        for _ in range(20):
            v = fset.project(rng.normal(scale=3.0, size=2))
            assert fset.contains(v, tol=1e-10)


class TestSupLinearLocalized:
    def test_interval_cases(self):
        fset = FeasibleSet(np.array([0.0]), 1.0)
        assert sup_linear_over_localized_set(np.array([1.0]), fset, 0.5) == pytest.approx(0.5, abs=1e-8)
        fset2 = FeasibleSet(np.array([0.8]), 1.0)
        assert sup_linear_over_localized_set(np.array([1.0]), fset2, 0.5) == pytest.approx(0.2, abs=1e-8)

    def test_against_p2_boundary_oracle(self):
        rng = np.random.default_rng(34)
        fset = FeasibleSet(np.array([0.6, -0.2]), 1.4)
        for _ in range(6):
            h = rng.normal(size=2)
            t = float(rng.uniform(0.2, 1.5))
            value = sup_linear_over_localized_set(h, fset, t)
            oracle = sup_localized_p2_oracle(h, fset, t, angles=40_000)
            assert value == pytest.approx(oracle, abs=1e-3)

    def test_dual_matches_pga(self):
        rng = np.random.default_rng(35)
        fset = FeasibleSet(np.array([0.5, 0.0, -0.25, 0.0, 0.0]), 1.0)
        H = rng.normal(size=(10, 5))
        for t in (0.3, 1.1):
            dual = geometry._sup_localized_dual_rows(H, fset, t)
            pga = np.array([sup_linear_over_localized_set(h, fset, t) for h in H])
            assert np.max(np.abs(dual - pga)) < 1e-6

    def test_monotone_nondecreasing_in_iterations(self):
        fset = FeasibleSet(np.array([0.3, 0.1, 0.0]), 1.0)
        h = np.array([0.7, -1.2, 0.4])
        values = [sup_linear_over_localized_set(h, fset, 0.8, max_iter=k) for k in (1, 3, 10, 50)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_dykstra_nonconvergence_reports_residual(self):
        fset = FeasibleSet(np.array([0.3, 0.1]), 1.0)
        with pytest.raises(ConvergenceError, match="residual"):
            sup_linear_over_localized_set(np.array([1.0, 1.0]), fset, 0.5, dykstra_max_iter=1)

    def test_invalid_t(self):
        fset = FeasibleSet(np.array([0.3]), 1.0)
        with pytest.raises(ValueError):
            sup_linear_over_localized_set(np.array([1.0]), fset, 0.0)


class TestLocalizedWidth:
    def test_interval_case(self):
        fset = FeasibleSet(np.array([0.0]), 1.0)
        w = localized_width(fset, 0.5, 20_000, stream(36, "w"))
        assert abs(w.mean - math.sqrt(2.0 / math.pi)) <= 3 * w.stderr

    def test_matched_cone_homogeneity(self):
        # magnitude well above the largest t keeps the localized sets conic
        theta = np.zeros(10)
        theta[:3] = 4.0
        fset = FeasibleSet(theta, float(np.sum(np.abs(theta))))
        w_half = localized_width(fset, 0.5, 6000, stream(37, "a"))
        w_two = localized_width(fset, 2.0, 6000, stream(37, "b"))
        assert abs(w_half.mean - w_two.mean) <= 3 * math.hypot(w_half.stderr, w_two.stderr)
        cone_w = gaussian_width_cone(descent_cone(theta), 6000, stream(37, "c"))
        assert abs(w_half.mean - cone_w.mean) <= 3 * math.hypot(w_half.stderr, cone_w.stderr)

    def test_mismatched_p2_against_oracle_mc(self):
        fset = FeasibleSet(np.array([0.4, -0.3]), 1.2)
        t = 0.6
        w = localized_width(fset, t, 4000, stream(38, "w"))
        rng = np.random.default_rng(39)
        values = np.array([sup_localized_p2_oracle(h, fset, t, angles=8_000) for h in rng.normal(size=(150, 2))]) / t
        om = float(np.mean(values))
        ose = float(np.std(values, ddof=1) / math.sqrt(values.size))
        assert abs(w.mean - om) <= 3 * math.hypot(w.stderr, ose)

    def test_pga_method_agrees(self):
        fset = FeasibleSet(np.array([0.4, -0.3, 0.0]), 1.2)
        w_dual = localized_width(fset, 0.7, 40, stream(40, "w"), method="dual")
        w_pga = localized_width(fset, 0.7, 40, stream(40, "w"), method="pga")
        assert w_dual.mean == pytest.approx(w_pga.mean, abs=1e-6)


class TestGlobalWidth:
    def test_interval_case(self):
        fset = FeasibleSet(np.array([0.0]), 2.0)
        w = global_width_l1(fset, 20_000, stream(41, "w"))
        assert abs(w.mean - 2.0 * math.sqrt(2.0 / math.pi)) <= 3 * w.stderr

    def test_vertex_enumeration_identity_p2(self):
        # per-sample the sup over the shifted ball equals the max over vertices
        fset = FeasibleSet(np.array([0.2, 0.3]), 1.0)
        rng = np.random.default_rng(42)
        H = rng.normal(size=(500, 2))
        vertices = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        by_vertices = np.max(H @ vertices.T, axis=1) - H @ fset.theta_true
        direct = fset.radius_c * np.max(np.abs(H), axis=1) - H @ fset.theta_true
        assert np.allclose(by_vertices, direct, atol=1e-12)

    def test_dominates_localized(self):
        fset = FeasibleSet(np.array([0.4, -0.3, 0.1, 0.0]), 1.5)
        wg = global_width_l1(fset, 4000, stream(43, "w"))
        for t in (0.3, 0.8, 1.6):
            wl = localized_width(fset, t, 4000, stream(43, t))
            assert wg.mean >= wl.mean * t - 3 * math.hypot(wg.stderr, t * wl.stderr)
