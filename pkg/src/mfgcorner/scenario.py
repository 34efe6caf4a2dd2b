"""Scenario files: a versioned TOML description of one experiment.

Layout (every section except ``domain`` is optional)::

    version = 1
    kind = "kappa"            # kappa | f-order-1 | f-order-2 | verify | custom

    [domain]
    box = [-1.0, 1.0, -1.0, 1.0]
    resolution = 256          # or [nx, ny]
    diffusion = 1.0

    [inclusion]
    vertices = [[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]

    [candidate]
    polygons = [[[...], ...], ...]   # corners scanned by the detector

    [coefficients]            # numbers or expression strings in x, y
    kappa_in = "2"
    kappa_out = "1"
    lambda_in = 0.0
    lambda_out = 0.0
    f_in = ["1", "0.5", "0.2"]
    f_out = ["1", "0.5", "0.2"]

    [boundary]                # expression strings in x, y, s (arclength)
    f = ["x"]
    g = ["0", "0", "1"]
    epsilon = 0.03

    [ladders]
    epsilon = [0.01, 0.02, 0.04, 0.08, 0.16]
    tau = [20.0, 28.28, ...]

    [tolerances]
    newton = 1e-10
    small_data = 0.05
    recovery = 0.1
    threshold = 5.0

    [cone]                    # probe / verify-asymptotics targets
    apex = [0.0, 0.0]
    axis = [1.0, 0.0]
    half_angle = 0.7853981633974483
    radius = 1.0
    alphas = [0.3, 0.5, 1.0]

    [probe]
    xi = [-1.0, 0.0]          # optional direction override
    refine = 1
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np
import tomli
import tomli_w

from .expr import Expression, ExpressionError
from .forward import BoundaryData, PiecewiseCoefficient
from .geometry import ConvexCone, GeometryError, Grid, PolygonalInclusion, TruncatedCone

FORMAT_VERSION = 1
KINDS = ("kappa", "f-order-1", "f-order-2", "verify", "custom")
DEFAULT_ORDER = 3
DEFAULT_TOLERANCES = {"newton": 1e-10, "small_data": 0.05, "recovery": 0.1, "threshold": 5.0}

_SCHEMA = {
    "": {"version", "kind", "seed"},
    "domain": {"box", "resolution", "diffusion"},
    "inclusion": {"vertices"},
    "candidate": {"polygons"},
    "coefficients": {"kappa_in", "kappa_out", "lambda_in", "lambda_out", "f_in", "f_out"},
    "boundary": {"f", "g", "epsilon"},
    "ladders": {"epsilon", "tau"},
    "tolerances": set(DEFAULT_TOLERANCES),
    "cone": {"apex", "axis", "half_angle", "radius", "alphas"},
    "probe": {"xi", "refine"},
}


class ScenarioError(ValueError):
    """All schema problems found in one file; ``errors`` holds ``(line, message)``."""

    def __init__(self, errors):
        self.errors = sorted(errors, key=lambda e: (e[0] or 0, e[1]))
        lines = [f"line {ln}: {msg}" if ln else msg for ln, msg in self.errors]
        super().__init__("invalid scenario:\n  " + "\n  ".join(lines))


def _locate(text: str) -> dict:
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    where = {}
    section = ""
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), n)
            continue
        m = re.match(r"^([A-Za-z0-9_\-\"']+)\s*=", s)
        if m:
            where.setdefault((section, m.group(1).strip("\"'")), n)
    return where


@dataclass
class Scenario:
    box: tuple
    resolution: tuple
    diffusion: float = 1.0
    kind: str = "custom"
    seed: int = 0
    inclusion: np.ndarray | None = None
    candidates: list = field(default_factory=list)
    kappa: tuple = (Expression("0"), Expression("0"))
    lam: tuple = (0.0, 0.0)
    f_taylor: tuple = ((), ())
    boundary_f: tuple = ()
    boundary_g: tuple = ()
    epsilon: float = 0.03
    epsilon_ladder: tuple = (0.01, 0.02, 0.04, 0.08, 0.16)
    tau_ladder: tuple = ()
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    cone: dict | None = None
    xi: tuple | None = None
    refine: int = 1

    # -- model objects -------------------------------------------------------
    def grid(self) -> Grid:
        return Grid(self.box, *self.resolution)

    def polygon(self) -> PolygonalInclusion | None:
        return None if self.inclusion is None else PolygonalInclusion(self.inclusion)

    def candidate_polygons(self) -> list[PolygonalInclusion]:
        if self.candidates:
            return [PolygonalInclusion(p) for p in self.candidates]
        return [] if self.inclusion is None else [self.polygon()]

    def coefficient(self) -> PiecewiseCoefficient:
        def branch(e):
            return float(e(x=0.0, y=0.0)) if e.is_constant else e.field()

        return PiecewiseCoefficient(
            self.polygon(), branch(self.kappa[0]), branch(self.kappa[1]), self.lam[0], self.lam[1],
            tuple(branch(e) for e in self.f_taylor[0]), tuple(branch(e) for e in self.f_taylor[1]),
        )

    def boundary(self) -> BoundaryData:
        def term(e):
            return float(e(x=0.0)) if e.is_constant else e.trace()

        return BoundaryData([term(e) for e in self.boundary_f], [term(e) for e in self.boundary_g], self.epsilon)

    def truncated_cone(self) -> TruncatedCone | None:
        if self.cone is None:
            return None
        c = self.cone
        return TruncatedCone(ConvexCone(np.asarray(c["apex"], float), np.asarray(c["axis"], float),
                                        float(c["half_angle"])), float(c["radius"]))

    # -- normal form -----------------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "seed": self.seed,
            "domain": {"box": list(self.box), "resolution": list(self.resolution), "diffusion": self.diffusion},
            "coefficients": {
                "kappa_in": self.kappa[0].text, "kappa_out": self.kappa[1].text,
                "lambda_in": self.lam[0], "lambda_out": self.lam[1],
                "f_in": [e.text for e in self.f_taylor[0]], "f_out": [e.text for e in self.f_taylor[1]],
            },
            "boundary": {"f": [e.text for e in self.boundary_f], "g": [e.text for e in self.boundary_g],
                         "epsilon": self.epsilon},
            "ladders": {"epsilon": list(self.epsilon_ladder), "tau": list(self.tau_ladder)},
            "tolerances": dict(sorted(self.tolerances.items())),
            "probe": {"refine": self.refine},
        }
        if self.inclusion is not None:
            d["inclusion"] = {"vertices": np.asarray(self.inclusion, float).tolist()}
        if self.candidates:
            d["candidate"] = {"polygons": [np.asarray(p, float).tolist() for p in self.candidates]}
        if self.cone is not None:
            d["cone"] = {k: (list(v) if isinstance(v, (list, tuple, np.ndarray)) else v)
                         for k, v in sorted(self.cone.items())}
        if self.xi is not None:
            d["probe"]["xi"] = list(self.xi)
        return d

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def replace(self, **kw) -> "Scenario":
        return replace(self, **kw)


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def parse_scenario(text: str) -> Scenario:
    """Parse and validate; every problem found is reported in one :class:`ScenarioError`."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ScenarioError([(int(m.group(1)) if m else None, f"syntax error: {exc}")]) from None
    where = _locate(text)
    errors = []

    def err(section, key, msg):
        errors.append((where.get((section, key)) or where.get((section, None)), msg))

    for key, val in raw.items():
        if isinstance(val, dict):
            if key not in _SCHEMA or key == "":
                err(key, None, f"unknown section [{key}]")
                continue
            for sub in val:
                if sub not in _SCHEMA[key]:
                    err(key, sub, f"unknown key {sub!r} in [{key}]")
        elif key not in _SCHEMA[""]:
            err("", key, f"unknown key {key!r}")

    version = raw.get("version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        err("", "version", f"unsupported format version {version!r}")
    kind = raw.get("kind", "custom")
    if kind not in KINDS:
        err("", "kind", f"kind must be one of {', '.join(KINDS)}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        err("", "seed", "seed must be an integer")
        seed = 0

    dom = raw.get("domain")
    box, res, diff = (-1.0, 1.0, -1.0, 1.0), (64, 64), 1.0
    if not isinstance(dom, dict):
        err("domain", None, "missing [domain] section")
    else:
        b = dom.get("box", list(box))
        if not (isinstance(b, list) and len(b) == 4 and all(_num(v) for v in b) and b[1] > b[0] and b[3] > b[2]):
            err("domain", "box", "box must be [x0, x1, y0, y1] with x1 > x0 and y1 > y0")
        else:
            box = tuple(float(v) for v in b)
        r = dom.get("resolution", 64)
        r = [r, r] if isinstance(r, int) and not isinstance(r, bool) else r
        if not (isinstance(r, list) and len(r) == 2 and all(isinstance(v, int) and not isinstance(v, bool) for v in r)):
            err("domain", "resolution", "resolution must be an integer or [nx, ny]")
        elif min(r) <= 0:
            err("domain", "resolution", "resolution must be positive")
        elif min(r) < 4:
            err("domain", "resolution", "resolution must be at least 4 cells per axis")
        else:
            res = (int(r[0]), int(r[1]))
        diff = dom.get("diffusion", 1.0)
        if not _num(diff) or diff <= 0:
            err("domain", "diffusion", "diffusion must be a positive number")
            diff = 1.0
    bounds = {"x": (box[0], box[1]), "y": (box[2], box[3]), "s": (0.0, 2 * (box[1] - box[0] + box[3] - box[2]))}

    def polygon(section, key, verts):
        if not (isinstance(verts, list) and all(isinstance(p, list) and len(p) == 2 and all(_num(c) for c in p)
                                                for p in verts)):
            err(section, key, "polygon vertices must be a list of [x, y] pairs")
            return None
        if len(verts) < 3:
            err(section, key, "polygon needs >= 3 vertices")
            return None
        try:
            poly = PolygonalInclusion(np.asarray(verts, float))
        except GeometryError as exc:
            err(section, key, f"malformed polygon: {exc}")
            return None
        v = poly.vertices
        if not (np.all(v[:, 0] > box[0]) and np.all(v[:, 0] < box[1])
                and np.all(v[:, 1] > box[2]) and np.all(v[:, 1] < box[3])):
            err(section, key, "polygon must lie strictly inside the domain box")
            return None
        return np.asarray(verts, float)

    inclusion = None
    if "inclusion" in raw:
        inclusion = polygon("inclusion", "vertices", raw["inclusion"].get("vertices"))
    candidates = []
    if "candidate" in raw:
        polys = raw["candidate"].get("polygons", [])
        if not isinstance(polys, list):
            err("candidate", "polygons", "polygons must be a list of polygons")
            polys = []
        for p in polys:
            c = polygon("candidate", "polygons", p)
            if c is not None:
                candidates.append(c)

    def expr(section, key, v, variables, default="0"):
        v = default if v is None else v
        try:
            e = Expression(v)
            e.check_domain(bounds)
        except ExpressionError as exc:
            err(section, key, f"{key}: {exc}")
            return Expression(default)
        extra = e.variables - set(variables)
        if extra:
            err(section, key, f"{key}: variables {sorted(extra)} not allowed here")
            return Expression(default)
        return e

    co = raw.get("coefficients", {})
    kappa = (expr("coefficients", "kappa_in", co.get("kappa_in"), "xy"),
             expr("coefficients", "kappa_out", co.get("kappa_out"), "xy"))
    lam = []
    for key in ("lambda_in", "lambda_out"):
        v = co.get(key, 0.0)
        if not _num(v):
            err("coefficients", key, f"{key} must be a number")
            v = 0.0
        lam.append(float(v))
    f_taylor = []
    for key in ("f_in", "f_out"):
        lst = co.get(key, [])
        if not isinstance(lst, list):
            err("coefficients", key, f"{key} must be a list")
            lst = []
        f_taylor.append([expr("coefficients", key, v, "xy") for v in lst])
    order = max(DEFAULT_ORDER, *(len(f) for f in f_taylor))
    f_taylor = tuple(tuple(f + [Expression("0")] * (order - len(f))) for f in f_taylor)

    bd = raw.get("boundary", {})
    bterms = []
    for key in ("f", "g"):
        lst = bd.get(key, [])
        if not isinstance(lst, list):
            err("boundary", key, f"{key} must be a list")
            lst = []
        bterms.append(tuple(expr("boundary", key, v, "xys") for v in lst))
    epsilon = bd.get("epsilon", 0.03)
    if not _num(epsilon):
        err("boundary", "epsilon", "epsilon must be a number")
        epsilon = 0.03

    lad = raw.get("ladders", {})
    eps_ladder = lad.get("epsilon", [0.01, 0.02, 0.04, 0.08, 0.16])
    if not (isinstance(eps_ladder, list) and all(_num(v) and v > 0 for v in eps_ladder)):
        err("ladders", "epsilon", "epsilon ladder must be a list of positive numbers")
        eps_ladder = []
    tau = lad.get("tau", [])
    if not (isinstance(tau, list) and all(_num(v) and v > 0 for v in tau)) or tau != sorted(tau):
        err("ladders", "tau", "tau ladder must be an increasing list of positive numbers")
        tau = []

    tol = dict(DEFAULT_TOLERANCES)
    for key, v in raw.get("tolerances", {}).items():
        if key in tol:
            if not _num(v) or v <= 0:
                err("tolerances", key, f"tolerance {key} must be positive")
            else:
                tol[key] = float(v)

    cone = None
    if "cone" in raw:
        c = dict(raw["cone"])
        c.setdefault("alphas", [])
        try:
            TruncatedCone(ConvexCone(np.asarray(c.get("apex"), float), np.asarray(c.get("axis"), float),
                                     float(c.get("half_angle"))), float(c.get("radius")))
            cone = {"apex": [float(v) for v in c["apex"]], "axis": [float(v) for v in c["axis"]],
                    "half_angle": float(c["half_angle"]), "radius": float(c["radius"]),
                    "alphas": [float(a) for a in c["alphas"]]}
        except (GeometryError, TypeError, ValueError) as exc:
            err("cone", None, f"invalid cone: {exc}")

    pr = raw.get("probe", {})
    xi = pr.get("xi")
    if xi is not None:
        if not (isinstance(xi, list) and all(_num(v) for v in xi)) or abs(np.linalg.norm(xi) - 1) > 1e-12:
            err("probe", "xi", "xi must be a unit vector")
            xi = None
        else:
            xi = tuple(float(v) for v in xi)
    refine = pr.get("refine", 1)
    if not isinstance(refine, int) or isinstance(refine, bool) or refine < 1:
        err("probe", "refine", "refine must be a positive integer")
        refine = 1

    if errors:
        raise ScenarioError(errors)
    return Scenario(
        box=box, resolution=res, diffusion=float(diff), kind=kind, seed=seed, inclusion=inclusion,
        candidates=candidates, kappa=kappa, lam=tuple(lam), f_taylor=f_taylor,
        boundary_f=bterms[0], boundary_g=bterms[1], epsilon=float(epsilon),
        epsilon_ladder=tuple(float(v) for v in eps_ladder), tau_ladder=tuple(float(v) for v in tau),
        tolerances=tol, cone=cone, xi=xi, refine=refine,
    )


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def load_candidates(path) -> list[np.ndarray]:
    """Candidate-geometry file: a TOML document with a ``polygons`` list."""
    with open(path, "rb") as fh:
        raw = tomli.load(fh)
    polys = raw.get("polygons", raw.get("candidate", {}).get("polygons"))
    if not isinstance(polys, list) or not polys:
        raise ScenarioError([(None, "candidate file needs a non-empty 'polygons' list")])
    out = []
    for p in polys:
        out.append(PolygonalInclusion(np.asarray(p, float)).vertices.copy())
    return out
