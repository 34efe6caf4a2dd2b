"""Stationary quadratic-Hamiltonian MFG system on a structured grid.

    -D lap u + kappa/2 |grad u|^2 + lambda - F(x, m) = 0
    -D lap m - div(kappa m grad u)               = 0
    u = psi, m = phi on the box boundary

Coefficients jump across a polygonal inclusion and are dispatched nodewise.
``F(x, m) = lambda + sum_l F_l(x) m^l / l!`` branchwise, so ``(0, 0)`` solves
the system for zero boundary data.  The divergence is in flux form with
face-averaged ``kappa`` and ``m``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from dataclasses import replace as _replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import INSIDE, Grid, PolygonalInclusion

log = logging.getLogger(__name__)

Scalar = float | Callable


class SolverDivergence(RuntimeError):
    """Newton made no progress; ``last`` holds the final iterate."""

    def __init__(self, message, last=None, history=()):
        super().__init__(message)
        self.last = last
        self.history = list(history)


def sample(value, X, Y) -> np.ndarray:
    """Evaluate a constant or a callable ``f(x, y)`` on broadcastable arrays."""
    if callable(value):
        out = np.asarray(value(X, Y), dtype=float)
    else:
        out = np.asarray(value, dtype=float)
    return np.broadcast_to(out, np.broadcast(X, Y).shape).astype(float)


@dataclass(frozen=True)
class GridCoefficients:
    kappa: np.ndarray
    lam: np.ndarray
    taylor: np.ndarray          # shape (L, nx+1, ny+1): F^(1) .. F^(L)
    chi: np.ndarray             # inclusion indicator on nodes

    def running_cost(self, m):
        """F(x, m) = lambda + sum_l F_l m^l / l!"""
        total = self.lam.copy()
        power = np.ones_like(m)
        for l, Fl in enumerate(self.taylor, start=1):
            power = power * m / l
            total = total + Fl * power
        return total

    def running_cost_dm(self, m):
        total = np.zeros_like(m)
        power = np.ones_like(m)
        for l, Fl in enumerate(self.taylor, start=1):
            total = total + Fl * power
            power = power * m / l
        return total


@dataclass(frozen=True)
class PiecewiseCoefficient:
    """Branch pairs (inside, outside) for kappa, lambda and the Taylor terms of F.

    Every branch is a constant or a vectorised callable ``f(x, y)``.  The value
    at ``x`` is ``out + (in - out) * chi_omega(x)``.
    """

    inclusion: PolygonalInclusion | None
    kappa_in: Scalar = 0.0
    kappa_out: Scalar = 0.0
    lambda_in: float = 0.0
    lambda_out: float = 0.0
    f_in: Sequence[Scalar] = (0.0, 0.0, 0.0)
    f_out: Sequence[Scalar] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.f_in) != len(self.f_out):
            raise ValueError("inside and outside F expansions need the same order")
        object.__setattr__(self, "f_in", tuple(self.f_in))
        object.__setattr__(self, "f_out", tuple(self.f_out))

    @property
    def order(self) -> int:
        return len(self.f_in)

    def indicator(self, X, Y, tol=1e-12):
        if self.inclusion is None:
            return np.zeros(np.broadcast(X, Y).shape)
        pts = np.stack(np.broadcast_arrays(X, Y), axis=-1)
        return self.inclusion.contains(pts, tol=tol).astype(float)

    def _mix(self, a, b, X, Y, chi):
        va, vb = sample(a, X, Y), sample(b, X, Y)
        return vb + (va - vb) * chi

    def kappa(self, X, Y, chi=None):
        chi = self.indicator(X, Y) if chi is None else chi
        return self._mix(self.kappa_in, self.kappa_out, X, Y, chi)

    def taylor(self, l, X, Y, chi=None):
        chi = self.indicator(X, Y) if chi is None else chi
        return self._mix(self.f_in[l - 1], self.f_out[l - 1], X, Y, chi)

    def on_grid(self, grid: Grid) -> GridCoefficients:
        X, Y = grid.mesh
        chi = (grid.classify(self.inclusion) == INSIDE).astype(float)
        lam = self.lambda_out + (self.lambda_in - self.lambda_out) * chi
        taylor = np.array([self.taylor(l, X, Y, chi) for l in range(1, self.order + 1)])
        if taylor.size == 0:
            taylor = np.zeros((0,) + grid.shape)
        return GridCoefficients(self.kappa(X, Y, chi), lam, taylor, chi)

    def jump_flags(self, samples_per_edge: int = 64) -> dict:
        """Whether each branch pair differs all along the inclusion boundary."""
        if self.inclusion is None:
            return {"kappa": False, "lambda": False, **{f"F{l}": False for l in range(1, self.order + 1)}}
        t = (np.arange(samples_per_edge) + 0.5) / samples_per_edge
        pts = np.vstack([a + t[:, None] * (b - a) for a, b in self.inclusion.edges()])
        X, Y = pts[:, 0], pts[:, 1]

        def differs(a, b):
            return bool(np.min(np.abs(sample(a, X, Y) - sample(b, X, Y))) > 1e-12)

        flags = {"kappa": differs(self.kappa_in, self.kappa_out),
                 "lambda": self.lambda_in != self.lambda_out}
        for l in range(1, self.order + 1):
            flags[f"F{l}"] = differs(self.f_in[l - 1], self.f_out[l - 1])
        return flags

    def replace(self, **kw) -> "PiecewiseCoefficient":
        return _replace(self, **kw)


@dataclass(frozen=True)
class BoundaryData:
    """``psi = sum_l eps^l f_l`` and ``phi = sum_l eps^l g_l`` on the box boundary.

    Each ``f_l``/``g_l`` is a constant or a callable ``f(x, y, s)`` with ``s``
    the counterclockwise arclength from the lower-left corner.
    """

    f: Sequence = ()
    g: Sequence = ()
    epsilon: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "f", tuple(self.f))
        object.__setattr__(self, "g", tuple(self.g))

    def with_epsilon(self, eps) -> "BoundaryData":
        return BoundaryData(self.f, self.g, eps)

    def coefficient(self, grid: Grid, which: str, l: int) -> np.ndarray:
        """Full-grid array holding ``f_l`` (or ``g_l``) on the boundary, zero inside."""
        terms = self.f if which == "f" else self.g
        out = np.zeros(grid.shape)
        if l > len(terms):
            return out
        ii, jj, _, s = grid.boundary_nodes(include_corners=True)
        X, Y = grid.mesh
        v = terms[l - 1]
        x, y = X[ii, jj], Y[ii, jj]
        vals = v(x, y, s) if callable(v) else np.full(x.shape, float(v))
        out[ii, jj] = np.broadcast_to(np.asarray(vals, dtype=float), x.shape)
        return out

    def traces(self, grid: Grid):
        psi = sum((self.epsilon**l * self.coefficient(grid, "f", l) for l in range(1, len(self.f) + 1)),
                  np.zeros(grid.shape))
        phi = sum((self.epsilon**l * self.coefficient(grid, "g", l) for l in range(1, len(self.g) + 1)),
                  np.zeros(grid.shape))
        return psi, phi


# ----------------------------------------------------------------------------
# discrete operators (interior rows only; boundary rows are left at zero)


def laplacian(v, grid: Grid) -> np.ndarray:
    out = np.zeros_like(v)
    hx2, hy2 = grid.hx**2, grid.hy**2
    out[1:-1, 1:-1] = (
        (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / hx2
        + (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / hy2
    )
    return out


def gradient(v, grid: Grid):
    gx = np.zeros_like(v)
    gy = np.zeros_like(v)
    gx[1:-1, 1:-1] = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * grid.hx)
    gy[1:-1, 1:-1] = (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * grid.hy)
    return gx, gy


def grad_sq(v, grid: Grid) -> np.ndarray:
    gx, gy = gradient(v, grid)
    return gx * gx + gy * gy


def flux_divergence(kappa, m, u, grid: Grid) -> np.ndarray:
    """div(kappa m grad u) with face averages of kappa and m."""
    hx, hy = grid.hx, grid.hy
    kx = 0.5 * (kappa[1:, :] + kappa[:-1, :])
    mx = 0.5 * (m[1:, :] + m[:-1, :])
    Jx = kx * mx * (u[1:, :] - u[:-1, :]) / hx          # faces i+1/2
    ky = 0.5 * (kappa[:, 1:] + kappa[:, :-1])
    my = 0.5 * (m[:, 1:] + m[:, :-1])
    Jy = ky * my * (u[:, 1:] - u[:, :-1]) / hy          # faces j+1/2
    out = np.zeros_like(u)
    out[1:-1, 1:-1] = (Jx[1:, 1:-1] - Jx[:-1, 1:-1]) / hx + (Jy[1:-1, 1:] - Jy[1:-1, :-1]) / hy
    return out


@lru_cache(maxsize=16)
def _dirichlet_lu(grid: Grid, D: float):
    """LU factors of -D lap_h with identity rows on the boundary."""
    nx1, ny1 = grid.shape
    N = nx1 * ny1
    idx = np.arange(N).reshape(grid.shape)
    inner = idx[1:-1, 1:-1].ravel()
    cx, cy = D / grid.hx**2, D / grid.hy**2
    rows = [inner] * 5 + [idx[grid.boundary_mask]]
    cols = [inner, idx[2:, 1:-1].ravel(), idx[:-2, 1:-1].ravel(),
            idx[1:-1, 2:].ravel(), idx[1:-1, :-2].ravel(), idx[grid.boundary_mask]]
    vals = [np.full(inner.size, 2 * cx + 2 * cy), np.full(inner.size, -cx), np.full(inner.size, -cx),
            np.full(inner.size, -cy), np.full(inner.size, -cy), np.ones(int(grid.boundary_mask.sum()))]
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    return spla.splu(A)


def solve_poisson(grid: Grid, source, trace, D: float = 1.0) -> np.ndarray:
    """Solve ``-D lap_h v = source`` inside, ``v = trace`` on the boundary."""
    rhs = np.where(grid.boundary_mask, trace, source).astype(float)
    lu = _dirichlet_lu(grid, float(D))
    return lu.solve(rhs.ravel()).reshape(grid.shape)


def harmonic_extension(grid: Grid, trace, D: float = 1.0) -> np.ndarray:
    return solve_poisson(grid, np.zeros(grid.shape), trace, D)


# ----------------------------------------------------------------------------


@dataclass
class MfgSolution:
    grid: Grid
    u: np.ndarray
    m: np.ndarray
    lambda_used: tuple[float, float]
    newton_iterations: int
    residual_norm: float
    small_data: bool = True
    history: list = field(default_factory=list)

    @property
    def min_m(self) -> float:
        return float(self.m.min())


def assemble_residual(coeff: GridCoefficients, u, m, grid: Grid, D: float = 1.0,
                      forcing=None):
    """Nodewise residuals ``(R_u, R_m)`` of both equations; zero on the boundary."""
    Ru = -D * laplacian(u, grid) + 0.5 * coeff.kappa * grad_sq(u, grid) + coeff.lam - coeff.running_cost(m)
    Rm = -D * laplacian(m, grid) - flux_divergence(coeff.kappa, m, u, grid)
    if forcing is not None:
        Ru = Ru - forcing[0]
        Rm = Rm - forcing[1]
    Ru[grid.boundary_mask] = 0.0
    Rm[grid.boundary_mask] = 0.0
    return Ru, Rm


def _full_residual(coeff, u, m, psi, phi, grid, D, forcing):
    Ru, Rm = assemble_residual(coeff, u, m, grid, D, forcing)
    b = grid.boundary_mask
    Ru[b] = u[b] - psi[b]
    Rm[b] = m[b] - phi[b]
    return np.concatenate([Ru.ravel(), Rm.ravel()])


def assemble_jacobian(coeff: GridCoefficients, u, m, grid: Grid, D: float = 1.0) -> sp.csc_matrix:
    """Exact Jacobian of the discrete residual with Dirichlet identity rows."""
    nx1, ny1 = grid.shape
    N = nx1 * ny1
    idx = np.arange(N).reshape(grid.shape)
    hx, hy = grid.hx, grid.hy
    cx, cy = D / hx**2, D / hy**2
    I = (slice(1, -1), slice(1, -1))
    E, W = (slice(2, None), slice(1, -1)), (slice(None, -2), slice(1, -1))
    Nn, S = (slice(1, -1), slice(2, None)), (slice(1, -1), slice(None, -2))
    p = idx[I].ravel()
    k = coeff.kappa
    kp = k[I].ravel()
    gx = ((u[E] - u[W]) / (2 * hx)).ravel()
    gy = ((u[Nn] - u[S]) / (2 * hy)).ravel()
    ke, kw = 0.5 * (k[I] + k[E]), 0.5 * (k[I] + k[W])
    kn, ks = 0.5 * (k[I] + k[Nn]), 0.5 * (k[I] + k[S])
    Me, Mw = 0.5 * (m[I] + m[E]), 0.5 * (m[I] + m[W])
    Mn, Ms = 0.5 * (m[I] + m[Nn]), 0.5 * (m[I] + m[S])
    De, Dw = u[E] - u[I], u[I] - u[W]
    Dn, Ds = u[Nn] - u[I], u[I] - u[S]

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(np.broadcast_to(v, r.shape).ravel())

    off = N
    # value-function rows
    add(p, p, np.full(p.size, 2 * cx + 2 * cy))
    add(p, idx[E].ravel(), -cx + kp * gx / (2 * hx))
    add(p, idx[W].ravel(), -cx - kp * gx / (2 * hx))
    add(p, idx[Nn].ravel(), -cy + kp * gy / (2 * hy))
    add(p, idx[S].ravel(), -cy - kp * gy / (2 * hy))
    add(p, off + p, -coeff.running_cost_dm(m)[I].ravel())
    # Fokker-Planck rows
    r = off + p
    add(r, off + p, 2 * cx + 2 * cy - ((ke * De - kw * Dw) / (2 * hx**2) + (kn * Dn - ks * Ds) / (2 * hy**2)).ravel())
    add(r, off + idx[E].ravel(), (-cx - ke * De / (2 * hx**2)).ravel())
    add(r, off + idx[W].ravel(), (-cx + kw * Dw / (2 * hx**2)).ravel())
    add(r, off + idx[Nn].ravel(), (-cy - kn * Dn / (2 * hy**2)).ravel())
    add(r, off + idx[S].ravel(), (-cy + ks * Ds / (2 * hy**2)).ravel())
    add(r, p, ((ke * Me + kw * Mw) / hx**2 + (kn * Mn + ks * Ms) / hy**2).ravel())
    add(r, idx[E].ravel(), (-ke * Me / hx**2).ravel())
    add(r, idx[W].ravel(), (-kw * Mw / hx**2).ravel())
    add(r, idx[Nn].ravel(), (-kn * Mn / hy**2).ravel())
    add(r, idx[S].ravel(), (-ks * Ms / hy**2).ravel())
    b = idx[grid.boundary_mask]
    add(b, b, np.ones(b.size))
    add(off + b, off + b, np.ones(b.size))
    return sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * N, 2 * N)
    )


def newton_solve(coeff: GridCoefficients, grid: Grid, psi, phi, D: float = 1.0, *,
                 tol: float = 1e-10, max_iter: int = 50, max_halvings: int = 5,
                 forcing=None, initial=None):
    """Damped Newton on the discrete system from the zero guess (or ``initial``).

    Returns ``(u, m, iterations, residual_sup, history)``.
    """
    N = grid.shape[0] * grid.shape[1]
    x = np.zeros(2 * N) if initial is None else np.concatenate([initial[0].ravel(), initial[1].ravel()])

    def F(x):
        return _full_residual(coeff, x[:N].reshape(grid.shape), x[N:].reshape(grid.shape),
                              psi, phi, grid, D, forcing)

    R = F(x)
    res = float(np.max(np.abs(R)))
    history = [res]
    it = 0
    while res > tol:
        if it >= max_iter:
            raise SolverDivergence(f"Newton did not converge in {max_iter} iterations (residual {res:.3e})",
                                   last=(x[:N].reshape(grid.shape), x[N:].reshape(grid.shape)),
                                   history=history)
        J = assemble_jacobian(coeff, x[:N].reshape(grid.shape), x[N:].reshape(grid.shape), grid, D)
        dx = spla.spsolve(J, -R)
        step = 1.0
        for _ in range(max_halvings + 1):
            x_try = x + step * dx
            R_try = F(x_try)
            res_try = float(np.max(np.abs(R_try)))
            if res_try < res:
                break
            step *= 0.5
        else:
            raise SolverDivergence(
                f"Newton stagnated at residual {res:.3e} after {max_halvings} step halvings",
                last=(x[:N].reshape(grid.shape), x[N:].reshape(grid.shape)), history=history)
        x, R, res = x_try, R_try, res_try
        it += 1
        history.append(res)
        log.debug("newton %d: residual %.3e (step %.3g)", it, res, step)
    return x[:N].reshape(grid.shape), x[N:].reshape(grid.shape), it, res, history


def solve_forward(coeff: PiecewiseCoefficient, bc: BoundaryData, grid: Grid, D: float = 1.0, *,
                  tol: float = 1e-10, small_data_bound: float = 0.05, forcing=None,
                  max_iter: int = 50) -> MfgSolution:
    """Solve the coupled system for the boundary data ``bc`` on ``grid``."""
    if not D > 0:
        raise ValueError("diffusion D must be positive")
    psi, phi = bc.traces(grid)
    b = grid.boundary_mask
    size = float(np.max(np.abs(psi[b])) + np.max(np.abs(phi[b])))
    small = size <= small_data_bound
    if not small:
        warnings.warn(f"boundary data size {size:.3g} exceeds the small-data bound {small_data_bound:g}",
                      stacklevel=2)
    gc = coeff.on_grid(grid)
    u, m, it, res, hist = newton_solve(gc, grid, psi, phi, D, tol=tol, forcing=forcing, max_iter=max_iter)
    return MfgSolution(grid, u, m, (coeff.lambda_in, coeff.lambda_out), it, res, small, hist)


@dataclass
class MeasurementRecord:
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    dnu_u: np.ndarray
    dnu_m: np.ndarray


def normal_derivative(v, grid: Grid):
    """One-sided second-order outward normal derivative at boundary nodes (corners excluded)."""
    ii, jj, nrm, s = grid.boundary_nodes()
    di = -nrm[:, 0].astype(int)
    dj = -nrm[:, 1].astype(int)
    step = np.where(di != 0, grid.hx, grid.hy)
    v0 = v[ii, jj]
    v1 = v[ii + di, jj + dj]
    v2 = v[ii + 2 * di, jj + 2 * dj]
    return (3 * v0 - 4 * v1 + v2) / (2 * step), (ii, jj, s)


def measure(sol: MfgSolution) -> MeasurementRecord:
    grid = sol.grid
    du, (ii, jj, s) = normal_derivative(sol.u, grid)
    dm, _ = normal_derivative(sol.m, grid)
    X, Y = grid.mesh
    return MeasurementRecord(s, X[ii, jj], Y[ii, jj], sol.u[ii, jj], sol.m[ii, jj], du, dm)
