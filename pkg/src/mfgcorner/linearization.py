"""First- and second-order linearisation of the MFG system around (0, 0).

With ``psi = eps f1 + eps^2 f2 + ...`` and ``phi = eps g1 + eps^2 g2 + ...``
the solution expands as ``u = eps u1 + eps^2 u2 / 2 + O(eps^3)`` (same for m).
The order-2 sources reuse the nonlinear solver's discrete operators, so the
linearised fields are exact derivatives of the discrete solution map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cgo import fit_power
from .forward import (
    BoundaryData,
    PiecewiseCoefficient,
    flux_divergence,
    grad_sq,
    laplacian,
    solve_forward,
    solve_poisson,
)
from .geometry import Grid


@dataclass
class LinearizedSolution:
    order: int
    u: np.ndarray
    m: np.ndarray
    grid: Grid
    D: float
    sources: dict = field(default_factory=dict)

    def residuals(self) -> tuple[float, float]:
        """Sup-norm residuals of the two Poisson problems on interior nodes."""
        g = self.grid
        ru = -self.D * laplacian(self.u, g) - self.sources["u"]
        rm = -self.D * laplacian(self.m, g) - self.sources["m"]
        inner = ~g.boundary_mask
        return float(np.max(np.abs(ru[inner]))), float(np.max(np.abs(rm[inner])))


def _taylor(gc, l):
    if l <= len(gc.taylor):
        return gc.taylor[l - 1]
    return np.zeros(gc.kappa.shape)


def solve_linear_order1(coeff: PiecewiseCoefficient, f1, g1, grid: Grid, D: float = 1.0,
                        gc=None) -> LinearizedSolution:
    """``m1`` is the discrete harmonic extension of ``g1``; ``-D lap u1 = F1 m1``, ``u1 = f1``."""
    gc = coeff.on_grid(grid) if gc is None else gc
    zero = np.zeros(grid.shape)
    m1 = solve_poisson(grid, zero, g1, D)
    src_u = _taylor(gc, 1) * m1
    u1 = solve_poisson(grid, src_u, f1, D)
    return LinearizedSolution(1, u1, m1, grid, D, {"u": src_u, "m": zero})


def solve_linear_order2(coeff: PiecewiseCoefficient, prev: LinearizedSolution, f2, g2,
                        gc=None) -> LinearizedSolution:
    """Second derivative in eps of the discrete solution at eps = 0.

    ``-D lap m2 = 2 div(kappa m1 grad u1)`` with ``m2 = 2 g2`` and
    ``-D lap u2 = F1 m2 + F2 m1^2 - kappa |grad u1|^2`` with ``u2 = 2 f2``.
    """
    if prev.order != 1:
        raise ValueError("order-2 solve needs the order-1 solution")
    grid, D = prev.grid, prev.D
    gc = coeff.on_grid(grid) if gc is None else gc
    u1, m1 = prev.u, prev.m
    src_m = 2.0 * flux_divergence(gc.kappa, m1, u1, grid)
    m2 = solve_poisson(grid, src_m, 2.0 * np.asarray(g2), D)
    src_u = _taylor(gc, 1) * m2 + _taylor(gc, 2) * m1**2 - gc.kappa * grad_sq(u1, grid)
    u2 = solve_poisson(grid, src_u, 2.0 * np.asarray(f2), D)
    return LinearizedSolution(2, u2, m2, grid, D, {"u": src_u, "m": src_m})


def linearize(coeff: PiecewiseCoefficient, bc: BoundaryData, grid: Grid, D: float = 1.0, order: int = 2):
    """Solutions of orders ``1..order`` as a list."""
    gc = coeff.on_grid(grid)
    s1 = solve_linear_order1(coeff, bc.coefficient(grid, "f", 1), bc.coefficient(grid, "g", 1), grid, D, gc)
    out = [s1]
    if order >= 2:
        out.append(solve_linear_order2(coeff, s1, bc.coefficient(grid, "f", 2), bc.coefficient(grid, "g", 2), gc))
    return out


@dataclass
class TaylorReport:
    orders: int
    epsilon: np.ndarray
    remainder_u: np.ndarray
    remainder_m: np.ndarray
    slope_u: float | None
    slope_m: float | None
    required: float
    small_data: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(s is None or s >= self.required for s in (self.slope_u, self.slope_m))

    def verdict(self) -> dict:
        return {
            "orders": self.orders,
            "epsilon": self.epsilon.tolist(),
            "remainder_u": self.remainder_u.tolist(),
            "remainder_m": self.remainder_m.tolist(),
            "slope_u": self.slope_u,
            "slope_m": self.slope_m,
            "required_slope": self.required,
            "small_data": list(self.small_data),
            "verdict": "pass" if self.passed else "fail",
        }


def _remainder_slope(eps, rem, scale):
    # remainders at round-off level carry no rate: the expansion is exact
    if np.all(rem <= 1e-12 * max(scale, 1e-300)) or np.all(rem == 0):
        return None
    return fit_power(eps, rem).exponent


def taylor_consistency_check(coeff: PiecewiseCoefficient, bc: BoundaryData, grid: Grid,
                             epsilons, D: float = 1.0, orders: int = 2, *,
                             small_data_bound: float = 0.05, tol: float = 1e-10) -> TaylorReport:
    """Fit ``|u(eps) - sum_k eps^k u_k / k!|_inf`` against eps; expected slope ``orders + 1``.

    A channel whose remainders are all at round-off is reported with slope ``None``
    and counts as consistent.
    """
    eps = np.asarray(sorted(epsilons), dtype=float)
    if eps.size < 4:
        raise ValueError("epsilon ladder needs >= 4 entries")
    lin = linearize(coeff, bc, grid, D, order=orders)
    ru, rm, small = [], [], []
    scale_u = scale_m = 0.0
    for e in eps:
        sol = solve_forward(coeff, bc.with_epsilon(e), grid, D, tol=tol, small_data_bound=small_data_bound)
        pu = sum(e**k / np.prod(range(1, k + 1)) * s.u for k, s in enumerate(lin, start=1))
        pm = sum(e**k / np.prod(range(1, k + 1)) * s.m for k, s in enumerate(lin, start=1))
        small.append(bool(sol.small_data))
        ru.append(np.max(np.abs(sol.u - pu)))
        rm.append(np.max(np.abs(sol.m - pm)))
        scale_u = max(scale_u, np.max(np.abs(sol.u)))
        scale_m = max(scale_m, np.max(np.abs(sol.m)))
    ru, rm = np.array(ru), np.array(rm)
    return TaylorReport(orders, eps, ru, rm, _remainder_slope(eps, ru, scale_u),
                        _remainder_slope(eps, rm, scale_m), orders + 0.9, small)


def epsilon_derivative(coeff: PiecewiseCoefficient, bc: BoundaryData, grid: Grid, order: int,
                       eps: float = 0.02, D: float = 1.0, *, small_data_bound: float = np.inf):
    """Richardson-extrapolated eps-derivatives of the nonlinear solution at eps = 0.

    Order 1 uses one-sided quotients ``u(eps)/eps`` (error O(eps)), order 2 central
    quotients ``(u(eps) + u(-eps)) / eps^2`` (error O(eps^2)); both extrapolated
    with step ratio 2.  Returns ``(du, dm)``.
    """
    def solve(e):
        s = solve_forward(coeff, bc.with_epsilon(e), grid, D, small_data_bound=small_data_bound)
        return s.u, s.m

    if order == 1:
        def quot(e):
            u, m = solve(e)
            return u / e, m / e
        a, b = quot(eps), quot(eps / 2)
        return 2 * b[0] - a[0], 2 * b[1] - a[1]
    if order == 2:
        def quot(e):
            up, mp = solve(e)
            um, mm = solve(-e)
            return (up + um) / e**2, (mp + mm) / e**2
        a, b = quot(eps), quot(eps / 2)
        return (4 * b[0] - a[0]) / 3, (4 * b[1] - a[1]) / 3
    raise ValueError("order must be 1 or 2")
