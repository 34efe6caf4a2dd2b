import math

import numpy as np
import pytest

from mfgcorner.cgo import CgoProbe
from mfgcorner.detector import (
    INCONCLUSIVE,
    JUMP,
    NO_JUMP,
    AnalyticField,
    GridField,
    InadmissibleScenario,
    PairingInput,
    corner_scan,
    pairing_integral,
    run_f_experiment,
    run_kappa_experiment,
)
from mfgcorner.forward import BoundaryData, PiecewiseCoefficient, solve_poisson
from mfgcorner.geometry import ConvexCone, Grid, PolygonalInclusion, TruncatedCone
from mfgcorner.linearization import linearize

LADDER = [20.0 * 2 ** (k / 2) for k in range(7)]
APEX = np.array([0.5, 0.5])
CONE = TruncatedCone(ConvexCone.from_direction(APEX, [-1.0, -1.0], math.pi / 4), 0.5)
SQUARE = PolygonalInclusion(np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]))
BOX = (-1.0, 1.0, -1.0, 1.0)


def radial(power, scale=1.0):
    """v = scale * r^power about the apex, with its gradient."""
    def val(p):
        return scale * np.linalg.norm(p - APEX, axis=-1) ** power

    def grad(p):
        d = p - APEX
        r = np.linalg.norm(d, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = scale * power * r[..., None] ** (power - 2) * d
        return np.nan_to_num(g)
    return AnalyticField(val, grad)


def cubic_field():
    # v = r^2/4 + 0.1 (x - xc)^3, lap v = 1 + 0.6 (x - xc)
    def val(p):
        d = p - APEX
        return np.sum(d * d, axis=-1) / 4 + 0.1 * d[..., 0] ** 3

    def grad(p):
        d = p - APEX
        return np.stack([d[..., 0] / 2 + 0.3 * d[..., 0] ** 2, d[..., 1] / 2], axis=-1)
    return AnalyticField(val, grad)


def cubic_qbar(p):
    return 1.0 + 0.6 * (p[..., 0] - APEX[0])


class TestPairing:
    def test_zero_density_gives_zero(self):
        zero = AnalyticField(lambda p: np.zeros(p.shape[:-1]), lambda p: np.zeros(p.shape))
        inp = PairingInput(1.0, 1.0, 1.0, zero)
        s = pairing_integral(inp, CgoProbe.for_cone(CONE, 40.0), CONE)
        assert s.pairing_lhs == 0 and s.pairing_rhs == 0
        v = corner_scan(inp, CONE, LADDER)
        assert v.classification == NO_JUMP

    @pytest.mark.parametrize("tau", [5.0, 40.0, 160.0])
    def test_green_identity_with_analytic_field(self, tau):
        inp = PairingInput(cubic_qbar, 0.0, 1.0, cubic_field(), sign=1.0)
        s = pairing_integral(inp, CgoProbe.for_cone(CONE, tau), CONE)
        assert s.relative_mismatch < 1e-10

    def test_green_identity_negative_sign_and_diffusion(self):
        inp = PairingInput(0.0, lambda p: 0.5 * cubic_qbar(p), 1.0, cubic_field(), sign=-1.0, D=0.5)
        s = pairing_integral(inp, CgoProbe.for_cone(CONE, 30.0), CONE)
        assert s.relative_mismatch < 1e-10

    def test_green_mismatch_converges_with_grid(self):
        def v_exact(X, Y):
            return np.sin(1.3 * X + 0.4) * np.cos(0.7 * Y) + 0.5 * X**2 * Y + np.exp(0.5 * Y)

        def lap_exact(X, Y):
            return -(1.3**2 + 0.7**2) * np.sin(1.3 * X + 0.4) * np.cos(0.7 * Y) + Y + 0.25 * np.exp(0.5 * Y)

        mism = []
        for n in (32, 64):
            g = Grid(BOX, n)
            X, Y = g.mesh
            v = solve_poisson(g, -lap_exact(X, Y), v_exact(X, Y))
            inp = PairingInput(lambda p: lap_exact(p[..., 0], p[..., 1]), 0.0, 1.0, GridField(g, v))
            s = pairing_integral(inp, CgoProbe.for_cone(CONE, 10.0), CONE)
            mism.append(s.relative_mismatch)
        assert mism[1] < mism[0] / 3
        assert mism[1] < 1e-3

    def test_linear_in_density(self):
        probe = CgoProbe.for_cone(CONE, 25.0)
        a = pairing_integral(PairingInput(cubic_qbar, 0.0, 1.0, cubic_field()), probe, CONE)
        b = pairing_integral(PairingInput(cubic_qbar, 0.0, 3.0, cubic_field()), probe, CONE)
        assert b.pairing_lhs == pytest.approx(3 * a.pairing_lhs, rel=1e-13)


class TestCornerScan:
    def test_recovers_apex_value(self):
        inp = PairingInput(cubic_qbar, 0.0, 1.0, cubic_field())
        v = corner_scan(inp, CONE, LADDER)
        assert v.classification == JUMP
        assert v.recovered == pytest.approx(1.0, abs=0.02)
        assert abs(v.samples[-1].ratio - 1.0) < 0.02

    def test_constant_density(self):
        inp = PairingInput(2.5, 0.0, 1.0, radial(2.0, 2.5 / 4))
        v = corner_scan(inp, CONE, LADDER)
        assert v.classification == JUMP
        assert v.recovered == pytest.approx(2.5, rel=0.02)
        assert v.samples[-1].ratio.real == pytest.approx(2.5, rel=0.02)

    def test_holder_density_vanishing_at_apex_is_no_jump(self):
        inp = PairingInput(lambda p: np.linalg.norm(p - APEX, axis=-1) ** 0.5, 0.0, 1.0, radial(2.5, 1 / 6.25))
        v = corner_scan(inp, CONE, LADDER)
        assert v.classification == NO_JUMP
        assert v.decay_slope <= -0.2

    def test_ladder_validation(self):
        inp = PairingInput(1.0, 0.0, 1.0, radial(2.0, 0.25))
        with pytest.raises(ValueError):
            corner_scan(inp, CONE, LADDER[:5])
        with pytest.raises(ValueError):
            corner_scan(inp, CONE, [20, 30, 40, 50, 60, 70])

    def test_classification_labels(self):
        assert {JUMP, NO_JUMP, INCONCLUSIVE} == {"jump-present", "no-jump", "inconclusive"}


class TestGridField:
    def test_reproduces_cubic_polynomials(self):
        g = Grid(BOX, 12)
        X, Y = g.mesh
        f = GridField(g, X**3 - 2 * X * Y**2 + Y)
        p = np.array([[0.13, -0.71], [0.5, 0.5]])
        np.testing.assert_allclose(f.value(p), p[:, 0] ** 3 - 2 * p[:, 0] * p[:, 1] ** 2 + p[:, 1], atol=1e-12)
        np.testing.assert_allclose(f.gradient(p)[:, 0], 3 * p[:, 0] ** 2 - 2 * p[:, 1] ** 2, atol=1e-11)

    def test_outside_box_rejected(self):
        g = Grid(BOX, 8)
        with pytest.raises(ValueError):
            GridField(g, np.zeros(g.shape)).value(np.array([[1.5, 0.0]]))


def _kappa_setup(n=64):
    coeff = PiecewiseCoefficient(SQUARE, 2.0, 1.0, 0.0, 0.0, (1.0, 0.5, 0.2), (1.0, 0.5, 0.2))
    bc = BoundaryData(f=[lambda x, y, s: x + 0.5 * (x**2 - y**2) + 0.3 * y], g=[0.0, 0.0, 1.0])
    return coeff, bc, Grid(BOX, n)


class TestExperiments:
    def test_kappa_experiment_small_grid(self):
        coeff, bc, g = _kappa_setup()
        decoy = PolygonalInclusion(np.array([[0.6, -0.15], [0.9, -0.15], [0.9, 0.15], [0.6, 0.15]]))
        rep = run_kappa_experiment(coeff, bc, g, [SQUARE, decoy], LADDER)
        assert rep.passed, rep.summary()
        labels = [c["classification"] for c in rep.corners]
        assert labels == [JUMP] * 4 + [NO_JUMP] * 4

    def test_identical_branches_give_no_jump(self):
        coeff, bc, g = _kappa_setup(32)
        same = coeff.replace(kappa_in=1.0)
        rep = run_kappa_experiment(same, bc, g, [SQUARE], LADDER)
        assert [c["classification"] for c in rep.corners] == [NO_JUMP] * 4 and rep.passed

    def test_identical_running_cost_gives_no_jump(self):
        coeff, _, g = _kappa_setup(32)
        rep = run_f_experiment(coeff, BoundaryData(g=[lambda x, y, s: 0.6 + 0.2 * x]), g, [SQUARE], LADDER, 1)
        assert [c["classification"] for c in rep.corners] == [NO_JUMP] * 4 and rep.passed

    def test_green_mismatch_tracks_discretisation_error(self):
        # kappa scenario fields: the Green mismatch is of the size of the grid-to-grid change
        coeff, bc, _ = _kappa_setup()
        cone = SQUARE.corner_probe_regions()[2]
        rhs, mism = [], []
        for n in (64, 128):
            g = Grid(BOX, n)
            lt = linearize(coeff, bc, g)
            lr = linearize(coeff.replace(inclusion=None), bc, g)
            u1 = GridField(g, lt[0].u)
            h = AnalyticField(lambda p: np.sum(u1.gradient(p) ** 2, axis=-1))
            inp = PairingInput(lambda p: coeff.kappa(p[..., 0], p[..., 1]),
                               lambda p: coeff.kappa(p[..., 0], p[..., 1], np.zeros(p.shape[:-1])),
                               h, GridField(g, lt[1].u - lr[1].u))
            s = pairing_integral(inp, CgoProbe.for_cone(cone, 20.0), cone)
            rhs.append(s.pairing_rhs)
            mism.append(s.mismatch)
        assert mism[1] <= 10 * abs(rhs[1] - rhs[0])
        assert mism[1] < mism[0]

    def test_threads_do_not_change_results(self):
        coeff, bc, g = _kappa_setup(32)
        a = run_kappa_experiment(coeff, bc, g, [SQUARE], LADDER, workers=1)
        b = run_kappa_experiment(coeff, bc, g, [SQUARE], LADDER, workers=3)
        assert [c["recovered"] for c in a.corners] == [c["recovered"] for c in b.corners]

    def test_kappa_experiment_needs_vanishing_low_order_density(self):
        coeff, _, g = _kappa_setup(16)
        with pytest.raises(InadmissibleScenario):
            run_kappa_experiment(coeff, BoundaryData(f=[1.0], g=[1.0]), g, [SQUARE], LADDER)

    def test_f_experiment_needs_zero_psi(self):
        coeff, _, g = _kappa_setup(16)
        with pytest.raises(InadmissibleScenario):
            run_f_experiment(coeff, BoundaryData(f=[1.0], g=[1.0]), g, [SQUARE], LADDER, 1)

    def test_second_order_f_needs_continuous_kappa(self):
        coeff, _, g = _kappa_setup(16)
        with pytest.raises(InadmissibleScenario):
            run_f_experiment(coeff, BoundaryData(g=[1.0]), g, [SQUARE], LADDER, 2)
