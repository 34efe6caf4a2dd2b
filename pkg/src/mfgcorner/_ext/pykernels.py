"""NumPy implementations of the probe-quadrature inner loops."""

import numpy as np

_CHUNK = 1 << 21  # complex entries per temporary block


def exp_sum(tau, r, wr, zr, zi, wz):
    """sum_k wz[k] * sum_j wr[j] * exp(tau * r[j] * (zr[k] + 1j*zi[k]))"""
    r = np.asarray(r, dtype=float)
    wr = np.asarray(wr, dtype=float)
    z = tau * (np.asarray(zr, dtype=float) + 1j * np.asarray(zi, dtype=float))
    wz = np.asarray(wz, dtype=float)
    step = max(1, _CHUNK // max(r.size, 1))
    total = 0j
    for start in range(0, z.size, step):
        block = np.exp(np.multiply.outer(z[start:start + step], r)) @ wr
        total += block @ wz[start:start + step]
    return complex(total)


def exp_dot(tau, pts, apex, xi, xi_perp, wre, wim):
    """sum_k (wre[k] + 1j*wim[k]) * exp(tau * (xi + 1j*xi_perp) . (pts[k] - apex))"""
    d = np.asarray(pts, dtype=float) - np.asarray(apex, dtype=float)
    phase = tau * (d @ np.asarray(xi, dtype=float) + 1j * (d @ np.asarray(xi_perp, dtype=float)))
    w = np.asarray(wre, dtype=float) + 1j * np.asarray(wim, dtype=float)
    return complex(np.exp(phase) @ w)
