"""Corner detection by pairing coefficient jumps against harmonic probes.

If ``D lap v = sign * qbar`` near a corner, Green's formula gives

    int_{S_h} qbar w dx = sign * D * int_{dS_h} (w d_nu v - v d_nu w) ds

for every harmonic ``w``.  With exponentially decaying probes the left side
behaves like ``qbar(x_c) * int_{S_h} w`` as ``tau`` grows, so the ratio of
the pairing to the bare cone integral recovers the jump at the apex.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RectBivariateSpline

from . import _ext
from .cgo import CgoProbe, ConeQuadrature, boundary_rules, fit_power
from .forward import BoundaryData, PiecewiseCoefficient, sample, solve_forward
from .geometry import Grid, PolygonalInclusion, TruncatedCone, rho_of
from .linearization import linearize

log = logging.getLogger(__name__)

JUMP, NO_JUMP, INCONCLUSIVE = "jump-present", "no-jump", "inconclusive"


class InadmissibleScenario(ValueError):
    """Boundary data or coefficients outside the class an experiment needs."""


class GridField:
    """Bicubic spline through node values; evaluation outside the box is an error."""

    def __init__(self, grid: Grid, values, degree: int = 3):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        self._spl = RectBivariateSpline(grid.x, grid.y, self.values, kx=degree, ky=degree, s=0)

    def _check(self, pts):
        pts = np.asarray(pts, dtype=float)
        if not np.all(self.grid.contains(pts, tol=1e-12)):
            raise ValueError("interpolation point outside the grid box")
        return pts

    def value(self, pts):
        pts = self._check(pts)
        return self._spl.ev(pts[..., 0], pts[..., 1])

    def gradient(self, pts):
        pts = self._check(pts)
        return np.stack([self._spl.ev(pts[..., 0], pts[..., 1], dx=1),
                         self._spl.ev(pts[..., 0], pts[..., 1], dy=1)], axis=-1)


@dataclass
class AnalyticField:
    """Field given by closed-form value (and optional gradient) over points ``(..., 2)``."""

    fn: Callable
    grad: Callable | None = None

    def value(self, pts):
        return np.asarray(self.fn(np.asarray(pts, dtype=float)), dtype=float)

    def gradient(self, pts):
        if self.grad is None:
            raise ValueError("field has no gradient")
        return np.asarray(self.grad(np.asarray(pts, dtype=float)), dtype=float)


def _eval(q, pts):
    if hasattr(q, "value"):
        return q.value(pts)
    if callable(q):
        return np.asarray(q(pts), dtype=float)
    return np.full(np.asarray(pts).shape[:-1], float(q))


@dataclass
class PairingInput:
    """Coefficient pair, the factor ``h`` and the difference solution ``v``.

    ``q_true``/``q_ref`` map points ``(..., 2)`` to coefficient values of the
    two models; the jump density is ``qbar = (q_true - q_ref) * h``.  ``v``
    must provide ``value`` and ``gradient`` and satisfy ``D lap v = sign * qbar``.
    """

    q_true: object
    q_ref: object
    h: object
    v: object
    sign: float = 1.0
    D: float = 1.0

    def qbar(self, pts):
        return (_eval(self.q_true, pts) - _eval(self.q_ref, pts)) * _eval(self.h, pts)


@dataclass
class IndicatorSample:
    tau: float
    probe: CgoProbe
    pairing_lhs: complex
    pairing_rhs: complex
    reference: complex          # int_{S_h} w at the same tau
    lateral_cauchy: tuple[float, float]   # L2 norms of v and d_nu v on the lateral boundary
    dim: int = 2

    @property
    def scaled_value(self) -> complex:
        return self.tau**self.dim * self.pairing_lhs

    @property
    def ratio(self) -> complex:
        return self.pairing_lhs / self.reference

    @property
    def mismatch(self) -> float:
        return abs(self.pairing_lhs - self.pairing_rhs)

    @property
    def relative_mismatch(self) -> float:
        return self.mismatch / max(abs(self.pairing_lhs), 1e-300)

    def row(self) -> dict:
        return {
            "tau": self.tau,
            "lhs_re": self.pairing_lhs.real, "lhs_im": self.pairing_lhs.imag,
            "rhs_re": self.pairing_rhs.real, "rhs_im": self.pairing_rhs.imag,
            "scaled_re": self.scaled_value.real, "scaled_im": self.scaled_value.imag,
            "ratio_re": self.ratio.real, "ratio_im": self.ratio.imag,
            "mismatch": self.mismatch,
        }


def pairing_integral(inp: PairingInput, probe: CgoProbe, cone: TruncatedCone, *,
                     refine: int = 1, order: int = 8) -> IndicatorSample:
    """Evaluate both sides of the Green pairing independently."""
    if not np.allclose(probe.apex, cone.apex, atol=1e-14):
        raise ValueError("probe must be centred at the cone apex")
    rho = rho_of(cone, probe.xi)
    tau = probe.tau
    rule = ConeQuadrature.build(cone, tau, rho, refine, order)
    pts = np.ascontiguousarray(rule.points(cone.apex))
    wq = rule.weights() * inp.qbar(pts)
    lhs = _ext.exp_dot(tau, pts, cone.apex, probe.xi, probe.xi_perp,
                       np.ascontiguousarray(wq), np.zeros_like(wq))
    ref = rule.integrate_probe(probe, 0.0)

    rhs = 0j
    lateral_norms = (0.0, 0.0)
    for k, piece in enumerate(boundary_rules(cone, tau, rho, refine, order)):
        w = probe(piece.points)
        dnu_w = tau * (piece.normals @ probe.zeta) * w
        v = inp.v.value(piece.points)
        dnu_v = np.sum(inp.v.gradient(piece.points) * piece.normals, axis=-1)
        rhs += np.sum(piece.weights * (w * dnu_v - v * dnu_w))
        if k == 0:
            lateral_norms = (float(np.sqrt(np.sum(piece.weights * v * v))),
                             float(np.sqrt(np.sum(piece.weights * dnu_v * dnu_v))))
    rhs *= inp.sign * inp.D
    return IndicatorSample(tau, probe, complex(lhs), complex(rhs), complex(ref), lateral_norms, cone.dim)


@dataclass
class CornerVerdict:
    apex: np.ndarray
    limit: complex                  # extrapolated lhs / int w as tau -> inf
    recovered: float                # real part of the limit: qbar(x_c)
    mismatch_estimate: float        # Green mismatch over |int w| at the first tau
    decay_slope: float | None       # power fit of |tau^n lhs| over the upper half
    fit_residual: float
    classification: str
    samples: list = field(default_factory=list)
    reason: str = ""

    def summary(self) -> dict:
        return {
            "apex": [float(a) for a in self.apex],
            "limit_re": self.limit.real,
            "limit_im": self.limit.imag,
            "recovered": self.recovered,
            "mismatch_estimate": self.mismatch_estimate,
            "decay_slope": self.decay_slope,
            "fit_residual": self.fit_residual,
            "classification": self.classification,
            "reason": self.reason,
        }


def _check_scan_ladder(tau, cone, rho):
    t = np.asarray(tau, dtype=float)
    if t.size < 6:
        raise ValueError("corner scan needs a tau ladder with >= 6 entries")
    q = t[1:] / t[:-1]
    if np.any(t <= 0) or q[0] <= 1 or np.ptp(q) > 1e-9 * q.mean():
        raise ValueError("tau ladder must be increasing and geometric")
    if rho * cone.radius * t[-1] > 700:
        raise ValueError("rho * h * tau_max exceeds 700")
    return t


def corner_scan(inp: PairingInput, cone: TruncatedCone, tau_ladder, *, xi=None,
                threshold: float = 5.0, floor: float = 1e-9, slope_band: float = 0.1,
                refine: int = 1) -> CornerVerdict:
    """Pair over the ladder, extrapolate ``lhs / int w`` in ``1/tau`` and classify."""
    probe0 = CgoProbe.for_cone(cone, 0.0, xi)
    rho = rho_of(cone, probe0.xi)
    tau = _check_scan_ladder(tau_ladder, cone, rho)
    samples = [pairing_integral(inp, probe0.with_tau(t), cone, refine=refine) for t in tau]
    ratio = np.array([s.ratio for s in samples])
    # the smallest tau is the one the grid resolves best
    mism = samples[0].mismatch / abs(samples[0].reference)

    # ratio = qbar(x_c) + c1 / tau + c2 / tau^2 + ...
    A = np.vstack([np.ones_like(tau), 1 / tau, 1 / tau**2]).T
    coef, *_ = np.linalg.lstsq(A.astype(complex), ratio, rcond=None)
    limit = complex(coef[0])
    scale = max(np.max(np.abs(ratio)), floor)
    resid = float(np.sqrt(np.mean(np.abs(A @ coef - ratio) ** 2)) / scale)
    upper = tau.size // 2
    B = A[upper:, :2]
    lin, *_ = np.linalg.lstsq(B.astype(complex), ratio[upper:], rcond=None)

    mags = np.abs([s.scaled_value for s in samples])
    slope = None
    if np.all(mags[upper:] > 0):
        slope = float(fit_power(tau[upper:], mags[upper:]).exponent) if tau.size - upper >= 4 else float(
            np.polyfit(np.log(tau[upper:]), np.log(mags[upper:]), 1)[0])

    size = abs(limit)
    if np.all(np.abs(ratio) <= floor) or slope is None:
        cls, why = NO_JUMP, "pairing vanishes identically"
    elif size <= max(threshold * mism, floor):
        cls, why = NO_JUMP, "limit below mismatch threshold"
    elif slope < -slope_band:
        cls, why = NO_JUMP, "scaled indicator decays"
    elif slope > slope_band or resid > 0.05 or abs(lin[0] - limit) > 0.25 * size:
        cls, why = INCONCLUSIVE, "extrapolation unstable"
    else:
        cls, why = JUMP, "limit above mismatch threshold"
    return CornerVerdict(np.asarray(cone.apex), limit, limit.real, mism, slope, resid, cls, samples, why)


# ----------------------------------------------------------------------------
# end-to-end experiments


def _point_fn(fn):
    """Adapt an ``f(X, Y)`` field to the points-array convention."""
    return lambda pts: fn(pts[..., 0], pts[..., 1])


def _edge_points(poly: PolygonalInclusion, per_edge=32):
    t = (np.arange(per_edge) + 0.5) / per_edge
    return np.vstack([a + t[:, None] * (b - a) for a, b in poly.edges()])


def _cone_inside(poly: PolygonalInclusion | None, cone: TruncatedCone) -> bool:
    if poly is None:
        return False
    probe_pt = cone.apex + 1e-6 * cone.radius * cone.axis
    return bool(poly.contains(probe_pt[None, :], tol=0.0)[0])


@dataclass
class ExperimentReport:
    kind: str
    corners: list           # list of dict per candidate corner
    min_m: float
    passed: bool
    diagnostics: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "corners": self.corners,
            "min_m": self.min_m,
            "diagnostics": self.diagnostics,
            "verdict": "pass" if self.passed else "fail",
        }


def _scan_candidates(inp, truth_fn, candidates, true_inclusion, tau_ladder, rel_tol, *,
                     xi=None, threshold=5.0, refine=1, workers=1):
    jobs = [(ci, k, cone) for ci, poly in enumerate(candidates)
            for k, cone in enumerate(poly.corner_probe_regions())]

    def scan(job):
        return corner_scan(inp, job[2], tau_ladder, xi=xi, threshold=threshold, refine=refine)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(scan, jobs))
    else:
        results = [scan(j) for j in jobs]
    corners = []
    ok = True
    for (ci, k, cone), v in zip(jobs, results):
        inside = _cone_inside(true_inclusion, cone)
        truth = float(truth_fn(cone.apex)) if inside else 0.0
        expected = JUMP if inside and truth != 0.0 else NO_JUMP
        err = abs(v.recovered - truth) / abs(truth) if truth != 0.0 else None
        correct = v.classification == expected and (err is None or err <= rel_tol)
        ok &= correct
        row = v.summary()
        row.update(candidate=ci, corner=k, expected=expected, truth=truth,
                   relative_error=err, correct=bool(correct))
        corners.append(row)
    return corners, results, ok


def _check_nonzero_on(poly, field_fn, what, tol=1e-8):
    vals = np.abs(field_fn(_edge_points(poly)))
    if np.min(vals) <= tol:
        raise InadmissibleScenario(f"{what} vanishes on the inclusion boundary")
    return float(np.min(vals))


def run_kappa_experiment(coeff: PiecewiseCoefficient, bc: BoundaryData, grid: Grid,
                         candidates, tau_ladder, D: float = 1.0, *, rel_tol: float = 0.1,
                         epsilon: float = 0.03, small_data_bound: float = 0.05, xi=None,
                         threshold: float = 5.0, refine: int = 1, workers: int = 1) -> ExperimentReport:
    """Detect kappa-jump corners from the second-order value-function channel.

    Needs ``g1 = g2 = 0`` and ``g3 > 0``; then ``m1 = m2 = 0`` and the
    difference ``v = u2 - u2_ref`` obeys ``D lap v = (kappa - kappa_ref) |grad u1|^2``.
    The reference model carries the outside branches everywhere.
    """
    b = grid.boundary_mask
    for l in (1, 2):
        if np.any(bc.coefficient(grid, "g", l)[b] != 0):
            raise InadmissibleScenario(f"kappa experiment needs g{l} = 0")
    if not np.all(bc.coefficient(grid, "g", 3)[b] > 0):
        raise InadmissibleScenario("kappa experiment needs g3 > 0 on the boundary")
    ref = coeff.replace(inclusion=None)
    lt, lr = linearize(coeff, bc, grid, D), linearize(ref, bc, grid, D)
    u1 = GridField(grid, lt[0].u)
    grad_sq = AnalyticField(lambda p: np.sum(u1.gradient(p) ** 2, axis=-1))
    min_grad = _check_nonzero_on(coeff.inclusion, grad_sq.value, "grad u1")
    v = GridField(grid, lt[1].u - lr[1].u)
    inp = PairingInput(_point_fn(coeff.kappa), _point_fn(ref.kappa), grad_sq, v, sign=1.0, D=D)

    def truth(x):
        X, Y = np.array([x[0]]), np.array([x[1]])
        one = np.ones(1)
        jump = coeff.kappa(X, Y, one) - coeff.kappa(X, Y, 0 * one)
        return jump[0] * grad_sq.value(np.asarray(x)[None, :])[0]

    corners, verdicts, ok = _scan_candidates(inp, truth, candidates, coeff.inclusion, tau_ladder, rel_tol,
                                             xi=xi, threshold=threshold, refine=refine, workers=workers)
    sol = solve_forward(coeff, bc.with_epsilon(epsilon), grid, D, small_data_bound=small_data_bound)
    ok &= sol.min_m >= 0
    diag = {"min_grad_sq_on_interface": min_grad, "newton_iterations": sol.newton_iterations,
            "epsilon": epsilon}
    return ExperimentReport("kappa", corners, sol.min_m, bool(ok), diag, verdicts)


def run_f_experiment(coeff: PiecewiseCoefficient, bc: BoundaryData, grid: Grid, candidates,
                     tau_ladder, ell: int, D: float = 1.0, *, rel_tol: float = 0.1,
                     epsilon: float = 0.03, small_data_bound: float = 0.05, xi=None,
                     threshold: float = 5.0, refine: int = 1, workers: int = 1) -> ExperimentReport:
    """Detect jumps of the Taylor term ``F_ell`` (ell = 1, 2) of the running cost.

    Needs ``psi = 0`` and ``g1 > 0``.  For ``ell = 1`` the pairing uses
    ``v = u1 - u1_ref`` and ``h = m1``; for ``ell = 2`` (kappa and F1
    continuous) ``v = u2 - u2_ref`` and ``h = m1^2``.  In both cases
    ``D lap v = -(F_ell - F_ell_ref) h``.
    """
    if ell not in (1, 2):
        raise ValueError("ell must be 1 or 2")
    if ell > coeff.order:
        raise InadmissibleScenario("running cost expansion is shorter than the requested order")
    b = grid.boundary_mask
    for l in range(1, len(bc.f) + 1):
        if np.any(bc.coefficient(grid, "f", l)[b] != 0):
            raise InadmissibleScenario("F experiment needs psi = 0")
    if not np.all(bc.coefficient(grid, "g", 1)[b] > 0):
        raise InadmissibleScenario("F experiment needs g1 > 0 on the boundary")
    if ell == 2:
        X, Y = grid.mesh
        for name, a, c in (("kappa", coeff.kappa_in, coeff.kappa_out), ("F1", coeff.f_in[0], coeff.f_out[0])):
            if np.max(np.abs(sample(a, X, Y) - sample(c, X, Y))) > 0:
                raise InadmissibleScenario(f"second-order F experiment needs a continuous {name}")
    ref = coeff.replace(inclusion=None)
    lt, lr = linearize(coeff, bc, grid, D), linearize(ref, bc, grid, D)
    m1 = GridField(grid, lt[0].m)
    h = AnalyticField(lambda p: m1.value(p) ** ell)
    min_h = _check_nonzero_on(coeff.inclusion, h.value, "m1")
    v = GridField(grid, lt[ell - 1].u - lr[ell - 1].u)
    inp = PairingInput(_point_fn(lambda X, Y: coeff.taylor(ell, X, Y)),
                       _point_fn(lambda X, Y: ref.taylor(ell, X, Y)), h, v, sign=-1.0, D=D)

    def truth(x):
        X, Y = np.array([x[0]]), np.array([x[1]])
        one = np.ones(1)
        jump = coeff.taylor(ell, X, Y, one) - coeff.taylor(ell, X, Y, 0 * one)
        return jump[0] * h.value(np.asarray(x)[None, :])[0]

    corners, verdicts, ok = _scan_candidates(inp, truth, candidates, coeff.inclusion, tau_ladder, rel_tol,
                                             xi=xi, threshold=threshold, refine=refine, workers=workers)
    sol = solve_forward(coeff, bc.with_epsilon(epsilon), grid, D, small_data_bound=small_data_bound)
    ok &= sol.min_m > 0
    diag = {"min_h_on_interface": min_h, "newton_iterations": sol.newton_iterations, "epsilon": epsilon}
    return ExperimentReport(f"f-order-{ell}", corners, sol.min_m, bool(ok), diag, verdicts)
