"""Compiled vs NumPy probe-quadrature kernels on rule sizes used by the detector.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import math
import timeit

import numpy as np

from mfgcorner import _ext
from mfgcorner._ext import pykernels
from mfgcorner.cgo import CgoProbe, ConeQuadrature
from mfgcorner.geometry import ConvexCone, TruncatedCone, rho_of


def cases():
    cone = TruncatedCone(ConvexCone.from_direction([0.5, 0.5], [-1.0, -1.0], math.pi / 4), 0.5)
    for tau in (20.0, 80.0, 160.0):
        p = CgoProbe.for_cone(cone, tau)
        q = ConeQuadrature.build(cone, tau, rho_of(cone, p.xi))
        z = q.dirs @ p.zeta
        pts = np.ascontiguousarray(q.points(cone.apex))
        w = q.weights()
        sum_args = (tau, q.r, q.wr * q.r, np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag), q.wa)
        dot_args = (tau, pts, cone.apex, p.xi, p.xi_perp, w, np.zeros_like(w))
        yield tau, q.size, sum_args, dot_args


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    repeat = ap.parse_args().repeat
    compiled = None
    if _ext.BACKEND == "cython":
        from mfgcorner._ext import _kernels as compiled
    print(f"active backend: {_ext.BACKEND}")
    print(f"{'kernel':8s} {'tau':>6s} {'nodes':>8s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for tau, size, sum_args, dot_args in cases():
        for name, args in (("exp_sum", sum_args), ("exp_dot", dot_args)):
            py = getattr(pykernels, name)
            t_py = min(timeit.repeat(lambda: py(*args), number=1, repeat=repeat))
            row = f"{name:8s} {tau:6.0f} {size:8d} {1e3 * t_py:10.2f}"
            if compiled is not None:
                cy = getattr(compiled, name)
                t_cy = min(timeit.repeat(lambda: cy(*args), number=1, repeat=repeat))
                assert abs(cy(*args) - py(*args)) <= 1e-12 * max(abs(py(*args)), 1e-300)
                row += f" {1e3 * t_cy:10.2f} {t_py / t_cy:8.1f}"
            print(row)


if __name__ == "__main__":
    main()
