import math
import warnings

import numpy as np
import pytest
from scipy import integrate, special

from mfgcorner.cgo import (
    CgoProbe,
    ConeQuadrature,
    QuadratureError,
    boundary_norms,
    cone_integral,
    cone_integral_semi_analytic,
    default_perp,
    fit_exponential,
    fit_power,
    geometric_ladder,
    laplace_moment,
    verify_asymptotics,
)
from mfgcorner.geometry import ConvexCone, ProbeDirectionError, TruncatedCone


def cone2(theta=math.pi / 4, h=1.0, apex=(0.0, 0.0), axis=(1.0, 0.0)):
    return TruncatedCone(ConvexCone(np.array(apex), np.array(axis), theta), h)


def cone3(theta=math.pi / 4, h=1.0):
    return TruncatedCone(ConvexCone(np.zeros(3), np.array([0.0, 0.0, 1.0]), theta), h)


def polar_oracle(tau, theta, h, alpha):
    """Independent 2D reference by adaptive quadrature in (r, phi), xi = -axis."""
    def f(r, ph, part):
        z = np.exp(tau * r * (-math.cos(ph) + 1j * math.sin(ph))) * r ** (alpha + 1)
        return z.real if part == 0 else z.imag
    opts = dict(epsabs=0.0, epsrel=1e-11)
    with warnings.catch_warnings():
        # quadpack flags roundoff once it is at machine precision
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        re = integrate.dblquad(lambda r, ph: f(r, ph, 0), -theta, theta, 0.0, h, **opts)[0]
        im = integrate.dblquad(lambda r, ph: f(r, ph, 1), -theta, theta, 0.0, h, **opts)[0]
    return complex(re, im)


def spherical_oracle(tau, theta, h, alpha):
    """3D reference: azimuth done in closed form through the Bessel function J0."""
    def f(r, ph):
        return 2 * math.pi * r ** (alpha + 2) * math.sin(ph) * math.exp(-tau * r * math.cos(ph)) \
            * special.j0(tau * r * math.sin(ph))
    return integrate.dblquad(f, 0.0, theta, 0.0, h, epsabs=0.0, epsrel=1e-12)[0]


class TestProbe:
    def test_value_at_apex_is_one(self):
        c = cone2()
        p = CgoProbe.for_cone(c, 17.0)
        assert p(c.apex) == pytest.approx(1.0)

    def test_modulus_is_real_exponential(self):
        p = CgoProbe(3.0, np.array([0.0, -1.0]), np.array([1.0, 0.0]), np.array([0.2, 0.1]))
        x = np.array([[0.5, -0.3], [1.0, 2.0]])
        np.testing.assert_allclose(np.abs(p(x)), np.exp(3.0 * (x - p.apex) @ p.xi), rtol=1e-14)

    def test_real_exponential_decay(self):
        p = CgoProbe(2.0, np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.3, 0.3]))
        assert p(np.array([-0.2, 0.3])) == pytest.approx(math.exp(-1.0), rel=1e-15)

    def test_harmonic_by_finite_differences(self):
        p = CgoProbe(4.0, np.array([0.6, -0.8]), default_perp(np.array([0.6, -0.8])), np.zeros(2))
        h = 1e-3
        for x in np.array([[0.1, 0.2], [-0.3, 0.4], [0.0, 0.0]]):
            lap = sum(p(x + h * e) + p(x - h * e) - 2 * p(x) for e in np.eye(2)) / h**2
            assert abs(lap) <= 1e-4 * p.tau**2 * abs(p(x))

    def test_gradient_matches_finite_difference(self):
        p = CgoProbe(2.5, np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.zeros(2))
        x = np.array([0.3, -0.2])
        h = 1e-6
        fd = np.array([(p(x + h * e) - p(x - h * e)) / (2 * h) for e in np.eye(2)])
        np.testing.assert_allclose(p.gradient(x), fd, rtol=1e-8)

    def test_zeta_isotropic_3d(self):
        xi = np.array([0.0, 0.0, -1.0])
        z = xi + 1j * default_perp(xi)
        assert abs(z @ z) < 1e-15

    def test_invalid_directions(self):
        with pytest.raises(ValueError):
            CgoProbe(1.0, np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.zeros(2))
        with pytest.raises(ValueError):
            CgoProbe(-1.0, np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.zeros(2))


class TestLaplaceMoment:
    @pytest.mark.parametrize("mu", [3.0, 2.0 + 5.0j, 40.0 - 30.0j])
    def test_alpha_zero_closed_form(self, mu):
        d = 0.7
        assert laplace_moment(0.0, mu, d) == pytest.approx((1 - np.exp(-mu * d)) / mu, rel=1e-12)

    @pytest.mark.parametrize("mu", [1.5, 4.0 + 1.0j])
    def test_alpha_one_closed_form(self, mu):
        d = 1.3
        ref = (1 - np.exp(-mu * d) * (1 + mu * d)) / mu**2
        assert laplace_moment(1.0, mu, d) == pytest.approx(ref, rel=1e-12)

    def test_unit_exponential(self):
        assert laplace_moment(0.0, 1.0, math.inf) == pytest.approx(1.0, rel=1e-15)

    def test_alpha_one_against_quad(self):
        ref = integrate.quad(lambda r: r * math.exp(-2 * r), 0, 10, epsabs=0, epsrel=1e-13)[0]
        assert laplace_moment(1.0, 2.0, 10.0) == pytest.approx(ref, rel=1e-10)

    def test_complex_rate_closed_form(self):
        mu = 1 + 1j
        assert laplace_moment(0.0, mu, 5.0) == pytest.approx((1 - np.exp(-mu * 5)) / mu, rel=1e-12)

    def test_infinite_delta_is_gamma(self):
        assert laplace_moment(0.5, 2.0, math.inf) == pytest.approx(special.gamma(1.5) / 2**1.5)

    def test_fractional_against_quad(self):
        mu, a, d = 6.0 + 2.0j, 0.3, 0.9
        re = integrate.quad(lambda r: (r**a * np.exp(-mu * r)).real, 0, d, epsabs=0, epsrel=1e-13)[0]
        im = integrate.quad(lambda r: (r**a * np.exp(-mu * r)).imag, 0, d, epsabs=0, epsrel=1e-13)[0]
        assert laplace_moment(a, mu, d) == pytest.approx(complex(re, im), rel=1e-10)

    def test_requires_positive_real_part(self):
        with pytest.raises(ValueError):
            laplace_moment(0.0, -1.0 + 2.0j, 1.0)


class TestConeIntegral:
    @pytest.mark.parametrize("theta", [math.pi / 6, math.pi / 4, math.pi / 3])
    def test_tau_zero_is_area(self, theta):
        c = cone2(theta=theta, h=0.8)
        p = CgoProbe.for_cone(c, 0.0)
        assert cone_integral(p, c) == pytest.approx(c.volume(), rel=1e-13)

    def test_tau_zero_is_volume_3d(self):
        c = cone3(theta=0.6, h=0.9)
        p = CgoProbe.for_cone(c, 0.0)
        assert cone_integral(p, c).real == pytest.approx(c.volume(), rel=1e-12)

    @pytest.mark.parametrize("theta,alpha", [(math.pi / 4, 0.0), (math.pi / 3, 0.0), (math.pi / 3, 0.5),
                                             (math.pi / 3, 1.0)])
    def test_semi_analytic_at_tau_20(self, theta, alpha):
        c = cone2(theta=theta, h=1.0)
        p = CgoProbe.for_cone(c, 20.0)
        ref = cone_integral_semi_analytic(p, c, alpha)
        assert abs(cone_integral(p, c, alpha) - ref) <= 1e-6 * abs(ref)

    @pytest.mark.parametrize("tau,alpha", [(5.0, 0.0), (30.0, 0.5)])
    def test_polar_oracle(self, tau, alpha):
        c = cone2(theta=math.pi / 4, h=0.6)
        p = CgoProbe.for_cone(c, tau)
        ref = polar_oracle(tau, c.half_angle, c.radius, alpha)
        assert abs(cone_integral(p, c, alpha) - ref) <= 1e-8 * abs(ref)

    @pytest.mark.parametrize("tau", [3.0, 25.0])
    def test_spherical_oracle(self, tau):
        c = cone3(theta=math.pi / 5, h=1.0)
        p = CgoProbe.for_cone(c, tau)
        ref = spherical_oracle(tau, c.half_angle, c.radius, 0.0)
        assert abs(cone_integral(p, c) - ref) <= 1e-8 * abs(ref)

    @pytest.mark.parametrize("gamma", [0.3, 1.0, 2.0])
    def test_moment_below_h_gamma(self, gamma):
        c = cone2(theta=0.9, h=0.7)
        for tau in (0.0, 3.0, 40.0):
            p = CgoProbe.for_cone(c, tau)
            assert abs(cone_integral(p, c, gamma)) <= abs(cone_integral(p, c)) * c.radius**gamma

    def test_independent_of_apex_and_rotation(self):
        base = cone2()
        moved = cone2(apex=(0.3, -0.7), axis=(math.cos(1.1), math.sin(1.1)))
        a = cone_integral(CgoProbe.for_cone(base, 12.0), base)
        b = cone_integral(CgoProbe.for_cone(moved, 12.0), moved)
        assert b == pytest.approx(a, rel=1e-12)

    def test_refinement_consistent(self):
        c = cone2(theta=1.2)
        p = CgoProbe.for_cone(c, 60.0)
        assert cone_integral(p, c, refine=2) == pytest.approx(cone_integral(p, c), rel=1e-12)
        assert cone_integral(p, c, verify=True) == pytest.approx(cone_integral(p, c, refine=2), rel=1e-14)

    def test_verify_raises_on_unconverged_rule(self):
        c = cone2()
        p = CgoProbe.for_cone(c, 50.0)
        with pytest.raises(QuadratureError) as exc:
            cone_integral(p, c, verify=True, rtol=1e-30)
        assert exc.value.fine is not None

    def test_rejects_probe_not_decaying(self):
        c = cone2()
        with pytest.raises(ProbeDirectionError):
            cone_integral(CgoProbe.for_cone(c, 5.0, xi=c.axis), c)

    def test_quadrature_weights_sum_to_area(self):
        c = cone2(theta=0.4, h=2.0)
        q = ConeQuadrature.build(c, 0.0)
        assert q.weights().sum() == pytest.approx(c.volume(), rel=1e-13)
        assert np.all(c.contains(q.points(c.apex)))


class TestBoundaryNorms:
    def test_two_dimensional_oracles(self):
        theta, h, tau = math.pi / 4, 0.7, 9.0
        c = cone2(theta=theta, h=h)
        bn = boundary_norms(CgoProbe.for_cone(c, tau), c)
        ct = math.cos(theta)
        lat = (1 - math.exp(-2 * tau * h * ct)) / (tau * ct)
        cap = h * integrate.quad(lambda ph: math.exp(-2 * tau * h * math.cos(ph)), -theta, theta,
                                 epsabs=0, epsrel=1e-13)[0]
        assert bn.lateral.l2 ** 2 == pytest.approx(lat, rel=1e-11)
        assert bn.cap.l2 ** 2 == pytest.approx(cap, rel=1e-11)
        assert bn.l2 ** 2 == pytest.approx(lat + cap, rel=1e-11)

    def test_tau_zero_gives_surface_area(self):
        for c in (cone2(theta=0.5, h=0.8), cone3(theta=0.7, h=1.2)):
            bn = boundary_norms(CgoProbe.for_cone(c, 0.0), c)
            assert bn.l2**2 == pytest.approx(sum(c.boundary_area()), rel=1e-12)

    @pytest.mark.parametrize("tau", [1.0, 10.0, 80.0])
    def test_inequalities(self, tau):
        for c in (cone2(theta=0.5), cone3(theta=0.9)):
            bn = boundary_norms(CgoProbe.for_cone(c, tau), c)
            assert bn.l2 <= bn.h1 <= math.sqrt(2 * tau**2 + 1) * bn.l2 * (1 + 1e-12)
            assert bn.normal_l2 <= math.sqrt(2) * tau * bn.l2 * (1 + 1e-12)

    def test_cap_rate_is_rho_h(self):
        c = cone2(theta=math.pi / 6, h=1.0)
        tau = geometric_ladder(10.0, 2.0, 5)
        cap = [boundary_norms(CgoProbe.for_cone(c, t), c).cap.l2 for t in tau]
        fit = fit_exponential(tau, cap)
        assert -fit.exponent == pytest.approx(math.cos(math.pi / 6), rel=0.05)


class TestFits:
    def test_power_fit_exact(self):
        t = np.array([1.0, 2.0, 4.0, 8.0])
        f = fit_power(t, 3.0 * t**-2.5)
        assert f.exponent == pytest.approx(-2.5)
        assert f.residual < 1e-12 and f.ok
        assert f.predict(16.0) == pytest.approx(3.0 * 16.0**-2.5)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            fit_power([1.0, 2.0, 4.0], [1.0, 0.5, 0.25])


class TestVerifyAsymptotics:
    def test_two_dimensional_pass(self):
        c = cone2(theta=math.pi / 4)
        rep = verify_asymptotics(c, -c.axis, [10, 20, 40, 80, 160], alphas=[0.5])
        assert rep.passed, rep.checks
        assert rep.integral_fit.exponent == pytest.approx(-2.0, abs=0.05)

    def test_three_dimensional_moment_slope(self):
        c = cone3(theta=math.pi / 4)
        rep = verify_asymptotics(c, -c.axis, [10, 20, 40, 80, 160], alphas=[0.5], boundary=False)
        assert rep.moment_fits[0.5].exponent <= -3.4

    def test_ladder_validation(self):
        c = cone2()
        with pytest.raises(ValueError):
            verify_asymptotics(c, -c.axis, [10, 20, 40])
        with pytest.raises(ValueError):
            verify_asymptotics(c, -c.axis, [10, 20, 30, 40])
