import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impactsim.errors import (
    ConfigurationError,
    DegenerateBoundaryError,
    MetricDegeneracyError,
)
from impactsim.geometry import (
    ConstraintSpec,
    MetricField,
    cotangent_inner,
    cotangent_norm,
    decompose_impulse,
    energy,
    geodesic_acceleration,
    impact_map,
    inward_normal,
    normal_coordinate,
    project_boundary,
    project_K,
    tangent_norm,
)

COUPLED = np.array([[2.0, 1.0], [1.0, 2.0]])


def disk(radius=1.0):
    R2 = radius * radius
    return ConstraintSpec(
        phi=lambda u: R2 - u @ u,
        grad_phi=lambda u: -2.0 * np.asarray(u, dtype=float),
        hess_phi=lambda u: -2.0 * np.eye(2),
    )


def ellipse(a=2.0, b=1.0):
    return ConstraintSpec(
        phi=lambda u: 1.0 - (u[0] / a) ** 2 - (u[1] / b) ** 2,
        grad_phi=lambda u: np.array([-2.0 * u[0] / a**2, -2.0 * u[1] / b**2]),
    )


def plane(normal, offset=0.0):
    n = np.asarray(normal, dtype=float)
    return ConstraintSpec(phi=lambda u: n @ u + offset, grad_phi=lambda u: n.copy())


def warped_metric():
    # position-dependent, non-diagonal
    return MetricField(
        mass_fn=lambda u: np.array([[2.0 + math.sin(u[0]), 0.3 * u[1]], [0.3 * u[1], 1.5 + u[0] ** 2]])
    )


unit_vec = st.floats(0.0, 2 * math.pi).map(lambda a: np.array([math.cos(a), math.sin(a)]))
coeff = st.floats(-5.0, 5.0, allow_nan=False)


class TestMetricField:
    def test_constant_metric_inverse(self):
        m = MetricField.constant(COUPLED)
        assert m.is_constant
        np.testing.assert_allclose(m.inverse(None) @ COUPLED, np.eye(2), atol=1e-15)
        np.testing.assert_allclose(m.d_mass(np.zeros(2), np.ones(2)), 0.0)

    def test_rejects_asymmetric(self):
        m = MetricField(mass_fn=lambda u: np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(MetricDegeneracyError):
            m.mass(np.zeros(2))

    def test_rejects_indefinite(self):
        with pytest.raises(MetricDegeneracyError):
            MetricField.constant(np.diag([1.0, -1.0])).mass(None)

    def test_fd_derivative_matches_analytic(self):
        m = warped_metric()
        u, w = np.array([0.3, -0.7]), np.array([0.4, 1.1])
        exact = math.cos(u[0]) * w[0] * np.array([[1, 0], [0, 0]]) + np.array(
            [[0, 0.3 * w[1]], [0.3 * w[1], 2 * u[0] * w[0]]]
        )
        np.testing.assert_allclose(m.d_mass(u, w), exact, atol=1e-8)


class TestInnerProducts:
    def test_cotangent_inner_against_explicit_inverse(self):
        m = MetricField.constant(COUPLED)
        # inverse of [[a, b], [b, d]] is [[d, -b], [-b, a]] / (ad - b^2)
        inv = np.array([[2.0, -1.0], [-1.0, 2.0]]) / 3.0
        xi = np.array([1.0, 1.0])
        assert cotangent_inner(m, None, xi, xi) == pytest.approx(xi @ inv @ xi, abs=1e-15)
        assert cotangent_inner(m, None, xi, xi) == pytest.approx(2.0 / 3.0, abs=1e-15)

    def test_energy_is_half_cotangent_square(self):
        m = warped_metric()
        u, p = np.array([0.2, 0.4]), np.array([1.0, -3.0])
        assert energy(m, u, p) == pytest.approx(0.5 * cotangent_norm(m, u, p) ** 2)

    def test_lowering_is_dual(self):
        m = warped_metric()
        u, v = np.array([0.1, 0.9]), np.array([0.7, -0.2])
        assert tangent_norm(m, u, v) == pytest.approx(cotangent_norm(m, u, m.lower(u, v)), rel=1e-14)


class TestInwardNormal:
    def test_disk_with_anisotropic_mass(self):
        m = MetricField.constant(np.diag([4.0, 1.0]))
        bp = inward_normal(disk(), m, np.array([1.0, 0.0]))
        # M^-1 dphi = (-0.5, 0), |dphi|* = 1
        np.testing.assert_allclose(bp.inward_normal, [-0.5, 0.0], atol=1e-15)
        assert tangent_norm(m, bp.position, bp.inward_normal) == pytest.approx(1.0)

    def test_off_boundary_rejected(self):
        with pytest.raises(ValueError):
            inward_normal(disk(), MetricField.identity(2), np.array([0.5, 0.0]))

    def test_critical_point_rejected(self):
        cs = ConstraintSpec(phi=lambda u: u @ u, grad_phi=lambda u: 2.0 * u)
        with pytest.raises(DegenerateBoundaryError):
            inward_normal(cs, MetricField.identity(2), np.zeros(2))

    @given(unit_vec)
    def test_normal_is_metric_orthogonal_to_boundary(self, n):
        m = warped_metric()
        x = n  # unit circle boundary
        N = inward_normal(disk(), m, x).inward_normal
        tangent = np.array([-x[1], x[0]])
        assert N @ m.mass(x) @ tangent == pytest.approx(0.0, abs=1e-12)
        assert tangent_norm(m, x, N) == pytest.approx(1.0, rel=1e-12)
        assert disk().gradient(x) @ N > 0


class TestProjection:
    def test_interior_point_unchanged(self):
        x = np.array([0.1, 0.2])
        np.testing.assert_array_equal(project_K(disk(), MetricField.identity(2), x), x)

    def test_ellipse_against_dense_sampling(self):
        cs, m = ellipse(), MetricField.identity(2)

        def nearest(x, lo, hi, n):
            theta = np.linspace(lo, hi, n)
            pts = np.stack([2.0 * np.cos(theta), np.sin(theta)], axis=1)
            k = int(np.argmin(np.linalg.norm(pts - x, axis=1)))
            return theta, k, pts[k]

        for x in (np.array([3.0, 1.5]), np.array([-0.4, 2.2]), np.array([2.5, -0.1])):
            y = project_boundary(cs, m, x).position
            # coarse sweep, then a fine sweep around the coarse minimizer
            theta, k, _ = nearest(x, 0.0, 2 * np.pi, 200_001)
            step = theta[1] - theta[0]
            _, _, best = nearest(x, theta[k] - 2 * step, theta[k] + 2 * step, 200_001)
            assert abs(cs.value(y)) < 1e-12
            assert np.linalg.norm(x - y) == pytest.approx(np.linalg.norm(x - best), abs=1e-12)
            np.testing.assert_allclose(y, best, atol=1e-6)

    def test_constant_metric_plane_closed_form(self):
        # projection onto a hyperplane in the M-norm: y = x - (n.x + c) M^-1 n / (n M^-1 n)
        m = MetricField.constant(COUPLED)
        n = np.array([1.0, 2.0])
        cs = plane(n, 0.5)
        x = np.array([-2.0, -1.0])
        Minv_n = np.linalg.solve(COUPLED, n)
        expect = x - (n @ x + 0.5) * Minv_n / (n @ Minv_n)
        np.testing.assert_allclose(project_K(cs, m, x), expect, atol=1e-13)

    def test_unknown_mode(self):
        with pytest.raises(ConfigurationError):
            project_boundary(disk(), MetricField.identity(2), np.array([2.0, 0.0]), mode="nearest")

    def test_geodesic_matches_frozen_for_constant_metric(self):
        m = MetricField.constant(COUPLED)
        x = np.array([1.3, 0.4])
        a = project_boundary(disk(), m, x, mode="frozen-metric").position
        b = project_boundary(disk(), m, x, mode="geodesic").position
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_frozen_vs_geodesic_gap_is_quadratic(self):
        m = warped_metric()
        cs = disk()
        direction = np.array([0.6, 0.8])
        gaps = []
        for dist in (0.08, 0.04, 0.02):
            x = (1.0 + dist) * direction
            a = project_boundary(cs, m, x, mode="frozen-metric").position
            b = project_boundary(cs, m, x, mode="geodesic").position
            gaps.append(np.linalg.norm(a - b))
        assert gaps[0] > 0
        orders = [math.log2(gaps[i] / gaps[i + 1]) for i in range(2)]
        assert min(orders) > 1.7, (gaps, orders)

    def test_geodesic_acceleration_flat_metric_is_zero(self):
        np.testing.assert_allclose(
            geodesic_acceleration(MetricField.constant(COUPLED), np.zeros(2), np.array([1.0, 2.0])), 0.0
        )


class TestDecomposition:
    def test_against_direct_linear_solve(self):
        m = MetricField.constant(COUPLED)
        g = np.array([1.0, -3.0])
        cs = plane(g)
        x = np.zeros(2)
        p = np.array([0.7, 2.0])
        Minv = np.linalg.inv(COUPLED)
        # unknowns (alpha, t1, t2): alpha g + t = p, g^T M^-1 t = 0
        A = np.array([[g[0], 1.0, 0.0], [g[1], 0.0, 1.0], [0.0, *(g @ Minv)]])
        sol = np.linalg.solve(A, np.array([p[0], p[1], 0.0]))
        pn, pt = decompose_impulse(cs, m, x, p)
        np.testing.assert_allclose(pn, sol[0] * g, atol=1e-14)
        np.testing.assert_allclose(pt, sol[1:], atol=1e-14)

    @given(unit_vec, coeff, coeff)
    def test_components_are_orthogonal_and_sum(self, n, a, b):
        m = warped_metric()
        p = np.array([a, b])
        pn, pt = decompose_impulse(disk(), m, n, p)
        np.testing.assert_allclose(pn + pt, p, atol=1e-12)
        assert cotangent_inner(m, n, pt, disk().gradient(n)) == pytest.approx(0.0, abs=1e-10)


class TestImpactMap:
    x = np.array([0.6, 0.8])

    def test_restitution_out_of_range(self):
        with pytest.raises(ConfigurationError):
            impact_map(disk(), MetricField.identity(2), self.x, np.array([1.0, 1.0]), 1.5)

    def test_outgoing_impulsion_untouched(self):
        p = np.array([-1.0, -1.0])  # points inward
        out, flag = impact_map(disk(), MetricField.identity(2), self.x, p, 0.5, with_flag=True)
        np.testing.assert_array_equal(out, p)
        assert not flag

    @settings(max_examples=60)
    @given(unit_vec, coeff, coeff, st.floats(0.0, 1.0))
    def test_restitution_scales_normal_keeps_tangent(self, x, a, b, e):
        m = warped_metric()
        p = np.array([a, b])
        pn_before = normal_coordinate(disk(), m, x, p)
        p_plus = impact_map(disk(), m, x, p, e)
        _, pt_before = decompose_impulse(disk(), m, x, p)
        _, pt_after = decompose_impulse(disk(), m, x, p_plus)
        np.testing.assert_allclose(pt_after, pt_before, atol=1e-10)
        if pn_before < 0:
            assert normal_coordinate(disk(), m, x, p_plus) == pytest.approx(-e * pn_before, abs=1e-10)
        assert energy(m, x, p_plus) <= energy(m, x, p) + 1e-10

    @given(unit_vec, coeff, coeff)
    def test_elastic_reflection_is_involution(self, x, a, b):
        m = warped_metric()
        p = np.array([a, b])
        if normal_coordinate(disk(), m, x, p) >= 0:
            p = -p
        p_plus = impact_map(disk(), m, x, p, 1.0)
        assert energy(m, x, p_plus) == pytest.approx(energy(m, x, p), rel=1e-12, abs=1e-14)
        back = impact_map(disk(), m, x, -p_plus, 1.0)
        np.testing.assert_allclose(back, -p, atol=1e-10)

    def test_plastic_kills_normal(self):
        m = MetricField.identity(2)
        p_plus = impact_map(disk(), m, self.x, np.array([2.0, 1.0]), 0.0)
        assert normal_coordinate(disk(), m, self.x, p_plus) == pytest.approx(0.0, abs=1e-14)
