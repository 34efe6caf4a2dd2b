"""Harmonic exponential probes and their integrals over truncated cones.

The probe ``w(x) = exp(tau * (xi + i xi_perp) . (x - x_c))`` is harmonic
because ``xi + i xi_perp`` is an isotropic complex vector.  Integrals over a
truncated cone are computed in polar coordinates about the apex with
Gauss-Legendre panels in the radius (panel length at most ``pi / (2 tau)``)
and in the polar angle; in 3D the azimuth uses the periodic trapezoid rule.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from . import _ext
from .geometry import TruncatedCone, rho_of

# exp(-RADIAL_CUT) is far below double precision relative to the cone integral
RADIAL_CUT = 40.0
RATE_RESIDUAL_MAX = 0.02


class QuadratureError(RuntimeError):
    def __init__(self, message, coarse=None, fine=None):
        super().__init__(message)
        self.coarse = coarse
        self.fine = fine


def default_perp(xi) -> np.ndarray:
    """Deterministic unit vector orthogonal to ``xi``.

    2D: counterclockwise rotation by 90 degrees.  3D: projection of the first
    coordinate axis that is not nearly parallel to ``xi``.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.size == 2:
        return np.array([-xi[1], xi[0]])
    for ref in np.eye(xi.size):
        if abs(ref @ xi) < 0.9:
            p = ref - (ref @ xi) * xi
            return p / np.linalg.norm(p)
    raise ValueError("cannot build an orthogonal direction")  # unreachable for unit xi


@dataclass(frozen=True)
class CgoProbe:
    tau: float
    xi: np.ndarray
    xi_perp: np.ndarray
    apex: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        xp = np.asarray(self.xi_perp, dtype=float)
        apex = np.asarray(self.apex, dtype=float)
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if abs(np.linalg.norm(xi) - 1) > 1e-12 or abs(np.linalg.norm(xp) - 1) > 1e-12:
            raise ValueError("xi and xi_perp must be unit vectors")
        if abs(xi @ xp) > 1e-12:
            raise ValueError("xi and xi_perp must be orthogonal")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "xi_perp", xp)
        object.__setattr__(self, "apex", apex)
        object.__setattr__(self, "tau", float(self.tau))

    @classmethod
    def for_cone(cls, cone, tau, xi=None) -> "CgoProbe":
        """Probe at the cone apex; ``xi`` defaults to minus the axis."""
        xi = -cone.axis if xi is None else np.asarray(xi, dtype=float)
        return cls(tau, xi, default_perp(xi), cone.apex)

    def with_tau(self, tau) -> "CgoProbe":
        return CgoProbe(tau, self.xi, self.xi_perp, self.apex)

    @property
    def zeta(self) -> np.ndarray:
        return self.xi + 1j * self.xi_perp

    def __call__(self, x):
        d = np.asarray(x, dtype=float) - self.apex
        return np.exp(self.tau * (d @ self.xi + 1j * (d @ self.xi_perp)))

    evaluate = __call__

    def gradient(self, x):
        return self.tau * self(x)[..., None] * self.zeta


def evaluate_probe(p: CgoProbe, x):
    return p(x)


def laplace_moment(alpha: float, mu: complex, delta: float) -> complex:
    """``int_0^delta r**alpha exp(-mu r) dr`` for ``Re mu > 0``.

    Computed as ``Gamma(alpha+1) / mu**(alpha+1)`` minus the tail over
    ``[delta, inf)``.  The tail is evaluated after the shift ``r = delta + s``
    with Fourier-weighted adaptive quadrature, truncated where the integrand
    has fallen below ``exp(-36)`` of its value at ``s = 0``.
    """
    mu = complex(mu)
    if not mu.real > 0:
        raise ValueError(f"Re(mu) must be positive, got {mu!r}")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    head = special.gamma(alpha + 1.0) / mu ** (alpha + 1.0)
    if math.isinf(delta):
        return complex(head)
    if delta <= 0:
        return 0j
    a, b = mu.real, mu.imag

    def g(s):
        return (1.0 + s / delta) ** alpha * np.exp(-a * s)

    # a*s - alpha*log(1 + s/delta) >= 36
    s_max = 36.0 / a
    for _ in range(60):
        s_next = (36.0 + alpha * math.log1p(s_max / delta)) / a
        if abs(s_next - s_max) < 1e-9 * s_max:
            break
        s_max = s_next
    opts = dict(epsabs=0.0, epsrel=1e-13, limit=500)
    with warnings.catch_warnings():
        # quad flags roundoff when it reaches machine precision
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if b == 0.0:
            re = integrate.quad(g, 0.0, s_max, **opts)[0]
            im = 0.0
        else:
            re = integrate.quad(g, 0.0, s_max, weight="cos", wvar=b, **opts)[0]
            im = -integrate.quad(g, 0.0, s_max, weight="sin", wvar=b, **opts)[0]
    tail = delta**alpha * np.exp(-mu * delta) * complex(re, im)
    return complex(head - tail)


def _gl_panels(a, b, n_panels, order):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x).ravel()
    weights = (half[:, None] * w).ravel()
    return nodes, weights


def _graded_panels(a, b, n_panels, order, levels=14, ratio=0.15):
    """GL panels on [a, b] with the first panel geometrically refined toward ``a``.

    Handles integrands like ``(r - a)**alpha`` with non-integer ``alpha``.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    L = (b - a) / n_panels
    cuts = a + L * ratio ** np.arange(levels, -1, -1)
    edges = np.concatenate([[a], cuts, a + L * np.arange(2, n_panels + 1)])
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def _frame(axis):
    """Orthonormal (e1, e2) completing ``axis`` in 3D."""
    e1 = default_perp(axis)
    e2 = np.cross(axis, e1)
    return e1, e2


def _rot90(v):
    return np.array([-v[1], v[0]])


@dataclass(frozen=True)
class ConeQuadrature:
    """Tensor rule on a truncated cone: radial nodes times unit directions.

    The volume weight of node ``(r_j, d_k)`` is ``wr[j] * r_j**(n-1) * wa[k]``;
    ``wa`` already contains the angular Jacobian.
    """

    r: np.ndarray
    wr: np.ndarray
    dirs: np.ndarray
    wa: np.ndarray
    dim: int
    r_end: float

    @classmethod
    def build(cls, cone: TruncatedCone, tau: float = 0.0, rho: float = 1.0,
              refine: int = 1, order: int = 8, cut: float = RADIAL_CUT) -> "ConeQuadrature":
        h, t, n = cone.radius, cone.half_angle, cone.dim
        r_end = h if tau * rho * h <= cut else cut / (tau * rho)
        panel = np.pi / (2.0 * tau) if tau > 0 else h
        n_rad = refine * max(4, math.ceil(r_end / panel))
        r, wr = _graded_panels(0.0, r_end, n_rad, order)
        # angular panels resolve the phase tau * r * zeta . d, |d(zeta . d)| <= sqrt(2)
        phase = math.sqrt(2.0) * tau * r_end
        if n == 2:
            n_ang = refine * max(4, math.ceil(2.0 * t * phase / (np.pi / 2)))
            th, wth = _gl_panels(-t, t, n_ang, order)
            a = cone.axis
            dirs = np.cos(th)[:, None] * a + np.sin(th)[:, None] * _rot90(a)
            wa = wth
        elif n == 3:
            n_pol = refine * max(4, math.ceil(t * phase / (np.pi / 2)))
            th, wth = _gl_panels(0.0, t, n_pol, order)
            n_az = refine * (2 * math.ceil(phase * math.sin(t)) + 48)
            ph = 2.0 * np.pi * np.arange(n_az) / n_az
            e1, e2 = _frame(cone.axis)
            st = np.sin(th)[:, None, None]
            dirs = (
                np.cos(th)[:, None, None] * cone.axis
                + st * (np.cos(ph)[None, :, None] * e1 + np.sin(ph)[None, :, None] * e2)
            ).reshape(-1, 3)
            wa = (wth * np.sin(th))[:, None].repeat(n_az, axis=1).ravel() * (2.0 * np.pi / n_az)
        else:
            raise NotImplementedError("cone quadrature supports n = 2 and n = 3")
        return cls(r, wr, dirs, wa, n, r_end)

    @property
    def size(self) -> int:
        return self.r.size * self.wa.size

    def points(self, apex) -> np.ndarray:
        return (apex + self.r[:, None, None] * self.dirs[None, :, :]).reshape(-1, self.dim)

    def weights(self) -> np.ndarray:
        return np.outer(self.wr * self.r ** (self.dim - 1), self.wa).ravel()

    def integrate_probe(self, probe: CgoProbe, alpha: float = 0.0) -> complex:
        """``int |x - x_c|**alpha w(x) dx`` over the rule's region."""
        z = self.dirs @ probe.zeta
        radial = self.wr * self.r ** (alpha + self.dim - 1)
        return _ext.exp_sum(probe.tau, self.r, radial, np.ascontiguousarray(z.real),
                            np.ascontiguousarray(z.imag), self.wa)


def _check_apex(probe, cone):
    if not np.allclose(probe.apex, cone.apex, atol=1e-14):
        raise ValueError("probe must be centred at the cone apex")


def cone_integral(p: CgoProbe, cone: TruncatedCone, alpha: float = 0.0, *,
                  refine: int = 1, verify: bool = False, rtol: float = 1e-8) -> complex:
    """``int_{S_h} |x - x_c|**alpha w(x) dx``.

    With ``verify`` the rule is also run at doubled panel counts and a
    :class:`QuadratureError` carrying both values is raised on disagreement.
    """
    _check_apex(p, cone)
    rho = rho_of(cone, p.xi)
    val = ConeQuadrature.build(cone, p.tau, rho, refine).integrate_probe(p, alpha)
    if verify:
        fine = ConeQuadrature.build(cone, p.tau, rho, 2 * refine).integrate_probe(p, alpha)
        if abs(fine - val) > rtol * abs(fine):
            raise QuadratureError(
                f"cone quadrature not converged: {val!r} vs {fine!r}", coarse=val, fine=fine
            )
        return fine
    return val


def cone_integral_semi_analytic(p: CgoProbe, cone: TruncatedCone, alpha: float = 0.0) -> complex:
    """Reference value: radial integrals in closed form, angles by adaptive quadrature.

    Each ray contributes ``laplace_moment(alpha + n - 1, -tau * zeta . d, h)``;
    2D only.
    """
    if cone.dim != 2:
        raise NotImplementedError("semi-analytic reference implemented for n = 2")
    rho_of(cone, p.xi)
    a, ap = cone.axis, _rot90(cone.axis)

    def ray(th):
        d = np.cos(th) * a + np.sin(th) * ap
        mu = -p.tau * complex(d @ p.zeta)
        return laplace_moment(alpha + 1.0, mu, cone.radius)

    t = cone.half_angle
    opts = dict(epsabs=0.0, epsrel=1e-12, limit=400)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        re = integrate.quad(lambda th: ray(th).real, -t, t, **opts)[0]
        im = integrate.quad(lambda th: ray(th).imag, -t, t, **opts)[0]
    return complex(re, im)


@dataclass(frozen=True)
class SurfaceRule:
    """Quadrature on one boundary piece: points, outward normals, area weights."""

    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray


def _decay_panels(length, decay_rate, order, refine):
    # panel length at most the e-folding length of |w|^2
    n = refine * max(4, math.ceil(length * max(decay_rate, 1e-300)))
    return _gl_panels(0.0, length, n, order)


def boundary_rules(cone: TruncatedCone, tau: float = 0.0, rho: float = 1.0,
                   refine: int = 1, order: int = 8) -> tuple[SurfaceRule, SurfaceRule]:
    """(lateral, cap) surface rules for the truncated cone boundary.

    Panel sizes follow the decay of ``|w|^2`` along the lateral rays and its
    concentration at the rim of the cap (width ``1 / (2 tau h)``); they also
    resolve the probe phase so the rules serve oscillatory integrands.
    """
    h, t, n, apex = cone.radius, cone.half_angle, cone.dim, cone.apex
    lat_len = h if 2 * tau * rho * h <= 2 * RADIAL_CUT else RADIAL_CUT / (tau * rho)
    rate = 2.0 * tau + 1.0 / h
    r, wr = _decay_panels(lat_len, rate, order, refine)
    ang_rate = 2.0 * tau * h + 1.0
    if n == 2:
        a, ap = cone.axis, _rot90(cone.axis)
        pts, nrm, wts = [], [], []
        for s in (1.0, -1.0):
            d = np.cos(t) * a + s * np.sin(t) * ap
            nu = -np.sin(t) * a + s * np.cos(t) * ap
            pts.append(apex + r[:, None] * d)
            nrm.append(np.tile(nu, (r.size, 1)))
            wts.append(wr)
        lateral = SurfaceRule(np.vstack(pts), np.vstack(nrm), np.concatenate(wts))
        th, wth = _gl_panels(-t, t, refine * max(4, math.ceil(2 * t * ang_rate)), order)
        d = np.cos(th)[:, None] * a + np.sin(th)[:, None] * ap
        cap = SurfaceRule(apex + h * d, d, h * wth)
        return lateral, cap
    if n == 3:
        e1, e2 = _frame(cone.axis)
        n_az = refine * (2 * math.ceil(ang_rate * np.sin(t)) + 48)
        ph = 2.0 * np.pi * np.arange(n_az) / n_az
        wph = 2.0 * np.pi / n_az
        radial_dir = np.cos(ph)[:, None] * e1 + np.sin(ph)[:, None] * e2
        d_lat = np.cos(t) * cone.axis + np.sin(t) * radial_dir
        nu_lat = -np.sin(t) * cone.axis + np.cos(t) * radial_dir
        lateral = SurfaceRule(
            (apex + r[:, None, None] * d_lat[None]).reshape(-1, 3),
            np.broadcast_to(nu_lat[None], (r.size, n_az, 3)).reshape(-1, 3).copy(),
            np.outer(wr * r * np.sin(t), np.full(n_az, wph)).ravel(),
        )
        th, wth = _gl_panels(0.0, t, refine * max(4, math.ceil(t * ang_rate)), order)
        d_cap = (np.cos(th)[:, None, None] * cone.axis
                 + np.sin(th)[:, None, None] * radial_dir[None]).reshape(-1, 3)
        cap = SurfaceRule(
            apex + h * d_cap, d_cap,
            np.outer(h * h * wth * np.sin(th), np.full(n_az, wph)).ravel(),
        )
        return lateral, cap
    raise NotImplementedError("boundary rules support n = 2 and n = 3")


@dataclass(frozen=True)
class PieceNorms:
    l2: float
    h1: float
    normal_l2: float


@dataclass(frozen=True)
class BoundaryNorms:
    """Norms of the probe on the cone boundary, per piece and combined.

    ``h1`` uses the tangential (surface) gradient.
    """

    lateral: PieceNorms
    cap: PieceNorms

    @property
    def l2(self):
        return math.hypot(self.lateral.l2, self.cap.l2)

    @property
    def h1(self):
        return math.hypot(self.lateral.h1, self.cap.h1)

    @property
    def normal_l2(self):
        return math.hypot(self.lateral.normal_l2, self.cap.normal_l2)

    def as_tuple(self):
        return self.l2, self.h1, self.normal_l2


def _piece_norms(p: CgoProbe, rule: SurfaceRule) -> PieceNorms:
    d = rule.points - p.apex
    log_abs_w = p.tau * (d @ p.xi)
    # scale out the largest |w|^2 so tiny norms do not underflow
    shift = log_abs_w.max()
    w2 = np.exp(2.0 * (log_abs_w - shift))
    zn = rule.normals @ p.zeta
    dn2 = p.tau**2 * np.abs(zn) ** 2 * w2
    grad2 = 2.0 * p.tau**2 * w2
    tang2 = np.maximum(grad2 - dn2, 0.0)
    l2sq = rule.weights @ w2
    scale = math.exp(shift)
    return PieceNorms(
        l2=math.sqrt(l2sq) * scale,
        h1=math.sqrt(l2sq + rule.weights @ tang2) * scale,
        normal_l2=math.sqrt(rule.weights @ dn2) * scale,
    )


def boundary_norms(p: CgoProbe, cone: TruncatedCone, refine: int = 1) -> BoundaryNorms:
    """L2, H1 and normal-derivative L2 norms of ``w`` on the lateral boundary and the cap."""
    _check_apex(p, cone)
    rho = rho_of(cone, p.xi)
    lateral, cap = boundary_rules(cone, p.tau, rho, refine)
    return BoundaryNorms(_piece_norms(p, lateral), _piece_norms(p, cap))


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of ``log value`` against ``log tau`` (power) or ``tau`` (exp)."""

    tau: np.ndarray
    values: np.ndarray
    kind: str
    exponent: float
    intercept: float
    residual: float

    @property
    def ok(self) -> bool:
        return self.residual <= RATE_RESIDUAL_MAX

    def predict(self, tau):
        t = np.asarray(tau, dtype=float)
        x = np.log(t) if self.kind == "power" else t
        return np.exp(self.intercept + self.exponent * x)


def _fit(tau, values, kind, log_values=None):
    tau = np.asarray(tau, dtype=float)
    values = np.asarray(values, dtype=float)
    if tau.size < 4:
        raise ValueError("rate fits need at least 4 samples")
    y = np.log(values) if log_values is None else np.asarray(log_values, dtype=float)
    x = np.log(tau) if kind == "power" else tau
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ [slope, icpt] - y) ** 2)))
    return RateFit(tau, values, kind, float(slope), float(icpt), resid)


def fit_power(tau, values) -> RateFit:
    return _fit(tau, values, "power")


def fit_exponential(tau, values, log_values=None) -> RateFit:
    return _fit(tau, values, "exp", log_values)


def geometric_ladder(start, ratio, count):
    return [start * ratio**k for k in range(count)]


def _check_ladder(tau_ladder):
    t = np.asarray(tau_ladder, dtype=float)
    if t.size < 4:
        raise ValueError("tau ladder needs at least 4 entries")
    q = t[1:] / t[:-1]
    if np.any(t <= 0) or np.ptp(q) > 1e-9 * q.mean() or q[0] <= 1:
        raise ValueError("tau ladder must be increasing and geometric")
    return t


@dataclass
class AsymptoticsReport:
    dim: int
    rho: float
    radius: float
    tau: np.ndarray
    integrals: np.ndarray
    integral_fit: RateFit
    scaled_spread: float
    moment_fits: dict = field(default_factory=dict)
    cap_l2_fit: RateFit | None = None
    cap_normal_fit: RateFit | None = None
    h1_ratio_ok: bool = True
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def verdict(self) -> dict:
        out = {
            "dimension": self.dim,
            "rho": self.rho,
            "radius": self.radius,
            "integral_exponent": self.integral_fit.exponent,
            "integral_residual": self.integral_fit.residual,
            "scaled_spread_upper_half": self.scaled_spread,
            "moment_exponents": {f"{a:g}": f.exponent for a, f in self.moment_fits.items()},
            "checks": dict(self.checks),
            "verdict": "pass" if self.passed else "fail",
        }
        if self.cap_l2_fit is not None:
            out["cap_l2_rate"] = -self.cap_l2_fit.exponent
            out["cap_normal_rate"] = -self.cap_normal_fit.exponent
            out["rho_h"] = self.rho * self.radius
        return out


def verify_asymptotics(cone: TruncatedCone, xi, tau_ladder, alphas=(), *,
                       boundary: bool = True, refine: int = 1) -> AsymptoticsReport:
    """Fit decay rates of the cone integrals and boundary norms over a tau ladder.

    Checks: ``|int w| ~ tau**-n`` (slope within 0.05), moments decay at least
    like ``tau**-(alpha+n)``, cap norms decay exponentially at rate ``rho h``
    within 5 percent, and the H1/L2 ratio never exceeds ``sqrt(2 tau^2 + 1)``.
    Fits with residual above 0.02 fail the report.
    """
    tau = _check_ladder(tau_ladder)
    xi = np.asarray(xi, dtype=float)
    rho = rho_of(cone, xi)
    h, n = cone.radius, cone.dim
    if rho * h * tau[-1] > 700:
        raise ValueError("rho * h * tau_max exceeds 700; exp(-rho h tau) would underflow")
    probe0 = CgoProbe(tau[0], xi, default_perp(xi), cone.apex)
    probes = [probe0.with_tau(t) for t in tau]
    ints = np.array([cone_integral(p, cone, 0.0, refine=refine) for p in probes])
    fit = fit_power(tau, np.abs(ints))
    scaled = tau**n * np.abs(ints)
    upper = scaled[len(scaled) // 2:]
    spread = float(np.ptp(upper) / np.mean(upper))
    rep = AsymptoticsReport(n, rho, h, tau, ints, fit, spread)
    rep.checks["integral_exponent"] = abs(fit.exponent + n) <= 0.05
    rep.checks["integral_fit_residual"] = fit.ok
    rep.checks["scaled_spread"] = spread <= 0.10
    rep.checks["lower_bound_positive"] = bool(np.min(scaled) > 0)
    for a in alphas:
        vals = np.abs([cone_integral(p, cone, a, refine=refine) for p in probes])
        mf = fit_power(tau, vals)
        rep.moment_fits[float(a)] = mf
        rep.checks[f"moment_{a:g}_exponent"] = mf.exponent <= -(a + n) + 0.05
        rep.checks[f"moment_{a:g}_below_hgamma"] = bool(np.all(vals <= np.abs(ints) * h**a * (1 + 1e-9)))
    if boundary:
        norms = [boundary_norms(p, cone, refine) for p in probes]
        l2 = np.array([b.cap.l2 for b in norms])
        dn = np.array([b.cap.normal_l2 for b in norms])
        rep.cap_l2_fit = fit_exponential(tau, l2)
        rep.cap_normal_fit = fit_exponential(tau, dn)
        ratio_ok = all(
            b.h1 <= math.sqrt(2 * t * t + 1) * b.l2 * (1 + 1e-6)
            and b.cap.h1 <= math.sqrt(2 * t * t + 1) * b.cap.l2 * (1 + 1e-6)
            for b, t in zip(norms, tau)
        )
        normal_ok = all(b.normal_l2 <= math.sqrt(2) * t * b.l2 * (1 + 1e-9) for b, t in zip(norms, tau))
        rep.h1_ratio_ok = ratio_ok
        rho_h = rho * h
        rep.checks["cap_l2_rate"] = abs(-rep.cap_l2_fit.exponent - rho_h) <= 0.05 * rho_h
        rep.checks["cap_normal_rate"] = abs(-rep.cap_normal_fit.exponent - rho_h) <= 0.05 * rho_h
        rep.checks["h1_ratio"] = ratio_ok
        rep.checks["normal_bound"] = normal_ok
    return rep
