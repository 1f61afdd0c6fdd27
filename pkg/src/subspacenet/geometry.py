"""Conic algebra, synthetic curve scenes and classical fitting baselines.

Conics are ``Ax^2 + Bxy + Cy^2 + Dx + Ey + F = 0`` stored with a unit-norm
coefficient vector whose first significant entry is positive. Lines, circles
and ellipses all live in this representation, so the generators, fitters and
the sequential RANSAC baseline share one residual and one distance routine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataio import Instance, ValidationError

KINDS = ("line", "circle", "ellipse")
MIN_SUPPORT = {"line": 2, "circle": 3, "ellipse": 5, "conic": 5}
DEFAULT_BOX = (-1.0, 1.0, -1.0, 1.0)
RETRY_BUDGET = 100
RADIUS_RANGE = (0.2, 0.8)
MIN_AXIS_RATIO = 1.2

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class FitError(RuntimeError):
    """A fitter or the sequential baseline could not produce a model."""


class GenerationError(RuntimeError):
    """Scene parameters could not be placed inside the domain box."""


class Conic:
    """Normalized general conic ``(A, B, C, D, E, F)``."""

    __slots__ = ("coef",)

    def __init__(self, coefficients):
        c = np.asarray(coefficients, dtype=np.float64).reshape(6)
        if not np.all(np.isfinite(c)):
            raise ValidationError("conic coefficients must be finite")
        norm = np.linalg.norm(c)
        if norm == 0.0:
            raise ValidationError("all conic coefficients are zero")
        c = c / norm
        significant = np.flatnonzero(np.abs(c) > 1e-12)
        if c[significant[0]] < 0:
            c = -c
        self.coef = c

    def __repr__(self):
        a, b, c, d, e, f = self.coef
        return f"Conic(A={a:.6g}, B={b:.6g}, C={c:.6g}, D={d:.6g}, E={e:.6g}, F={f:.6g})"

    def __iter__(self):
        return iter(self.coef)

    @property
    def discriminant(self):
        a, b, c = self.coef[:3]
        return b * b - 4.0 * a * c

    @property
    def is_line(self):
        return bool(np.all(np.abs(self.coef[:3]) <= 1e-12))

    @classmethod
    def line(cls, normal, offset):
        """Line ``n . p + offset = 0``."""
        return cls([0, 0, 0, normal[0], normal[1], offset])

    @classmethod
    def circle(cls, center, radius):
        cx, cy = center
        return cls([1, 0, 1, -2 * cx, -2 * cy, cx * cx + cy * cy - radius * radius])

    @classmethod
    def ellipse(cls, center, a, b, theta):
        cx, cy = center
        ct, st = np.cos(theta), np.sin(theta)
        # quadratic form R diag(1/a^2, 1/b^2) R^T
        qa = ct * ct / a**2 + st * st / b**2
        qc = st * st / a**2 + ct * ct / b**2
        qb = 2 * ct * st * (1 / a**2 - 1 / b**2)
        d = -2 * qa * cx - qb * cy
        e = -qb * cx - 2 * qc * cy
        f = qa * cx * cx + qb * cx * cy + qc * cy * cy - 1.0
        return cls([qa, qb, qc, d, e, f])


def conic_residual(point, conic):
    """Algebraic residual of one point (or a 2 x n array of points)."""
    p = np.asarray(point, dtype=np.float64)
    x, y = p[0], p[1]
    a, b, c, d, e, f = conic.coef
    return a * x * x + b * x * y + c * y * y + d * x + e * y + f


def design_matrix(points):
    x, y = points
    return np.column_stack([x * x, x * y, y * y, x, y, np.ones_like(x)])


def ellipse_params(conic):
    """Return ``(center, a, b, theta)`` for a real ellipse conic."""
    a, b, c, d, e, f = conic.coef
    if conic.discriminant >= 0:
        raise FitError("conic is not an ellipse")
    q = np.array([[a, b / 2], [b / 2, c]])
    center = np.linalg.solve(q, [-d / 2, -e / 2])
    f0 = f + 0.5 * (d * center[0] + e * center[1])
    evals, evecs = np.linalg.eigh(q)
    ratio = -f0 / evals
    if np.any(ratio <= 0):
        raise FitError("imaginary ellipse")
    axes = np.sqrt(ratio)
    # axes[0] belongs to the smaller eigenvalue, hence the longer axis
    theta = np.arctan2(evecs[1, 0], evecs[0, 0])
    return center, axes[0], axes[1], theta


def circle_params(conic):
    a, _, _, d, e, f = conic.coef
    center = np.array([-d / (2 * a), -e / (2 * a)])
    r2 = center @ center - f / a
    if r2 <= 0:
        raise FitError("imaginary circle")
    return center, np.sqrt(r2)


def _ellipse_distance(points, center, a, b, theta, tol=1e-10, grid=48):
    """Per-point geometric distance to an ellipse.

    A coarse scan over the curve parameter brackets the nearest point, then
    golden-section search narrows each bracket to ``tol``.
    """
    ct, st = np.cos(theta), np.sin(theta)
    dx = points[0] - center[0]
    dy = points[1] - center[1]
    u = ct * dx + st * dy
    v = -st * dx + ct * dy

    def dist2(t):
        return (u - a * np.cos(t)) ** 2 + (v - b * np.sin(t)) ** 2

    ts = np.linspace(0.0, 2 * np.pi, grid, endpoint=False)
    scan = (u[:, None] - a * np.cos(ts)) ** 2 + (v[:, None] - b * np.sin(ts)) ** 2
    best = np.argmin(scan, axis=1)
    step = 2 * np.pi / grid
    lo = ts[best] - step
    hi = ts[best] + step
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, f2 = dist2(x1), dist2(x2)
    while np.max(hi - lo) > tol:
        left = f1 < f2
        # minimum in [lo, x2]: old x1 becomes new x2, and vice versa
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        new_x1 = hi - _GOLDEN * (hi - lo)
        new_x2 = lo + _GOLDEN * (hi - lo)
        x1, x2 = np.where(left, new_x1, x2), np.where(left, x1, new_x2)
        f1, f2 = np.where(left, dist2(x1), f2), np.where(left, f1, dist2(x2))
    return np.sqrt(np.minimum(dist2(0.5 * (lo + hi)), scan.min(axis=1)))


def conic_distance(points, conic, tol=1e-10):
    """Geometric distance from each column of ``points`` to ``conic``.

    Lines, circles and real ellipses use exact distances; other conics fall
    back to the first-order (Sampson) approximation.
    """
    points = np.asarray(points, dtype=np.float64)
    a, b, c, d, e, f = conic.coef
    if conic.is_line:
        return np.abs(d * points[0] + e * points[1] + f) / np.hypot(d, e)
    if abs(b) <= 1e-12 and abs(a - c) <= 1e-12:
        try:
            center, r = circle_params(conic)
        except FitError:
            return np.full(points.shape[1], np.inf)
        return np.abs(np.hypot(points[0] - center[0], points[1] - center[1]) - r)
    if conic.discriminant < 0:
        try:
            center, ax, bx, theta = ellipse_params(conic)
        except FitError:
            return np.full(points.shape[1], np.inf)
        return _ellipse_distance(points, center, ax, bx, theta, tol=tol)
    x, y = points
    res = conic_residual(points, conic)
    gx = 2 * a * x + b * y + d
    gy = b * x + 2 * c * y + e
    return np.abs(res) / np.maximum(np.hypot(gx, gy), 1e-300)


# --- fitters ---------------------------------------------------------------


def _check_points(points, minimum):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] != 2:
        raise ValueError("points must be a 2 x n array")
    if points.shape[1] < minimum:
        raise FitError(f"need at least {minimum} points, got {points.shape[1]}")
    return points


def _normalizer(points):
    mean = points.mean(axis=1)
    scale = np.sqrt(np.mean(np.sum((points - mean[:, None]) ** 2, axis=0)))
    if scale <= 1e-12:
        raise FitError("coincident points")
    return mean, scale


def _denormalize(coef, mean, scale):
    """Map a conic fitted on ``(p - mean) / scale`` back to original coordinates."""
    a, b, c, d, e, f = coef
    s = 1.0 / scale
    a2, b2, c2 = a * s * s, b * s * s, c * s * s
    d2, e2 = d * s, e * s
    mx, my = mean
    return np.array([
        a2,
        b2,
        c2,
        d2 - 2 * a2 * mx - b2 * my,
        e2 - b2 * mx - 2 * c2 * my,
        f + a2 * mx * mx + b2 * mx * my + c2 * my * my - d2 * mx - e2 * my,
    ])


def fit_line_tls(points):
    """Total-least-squares line through the centroid."""
    points = _check_points(points, 2)
    mean = points.mean(axis=1)
    centered = points - mean[:, None]
    _, s, vt = np.linalg.svd(centered.T, full_matrices=False)
    if s[0] <= 1e-12 * max(1.0, np.abs(points).max()):
        raise FitError("coincident points")
    normal = vt[-1]
    return Conic.line(normal, -normal @ mean)


def fit_circle_algebraic(points):
    """Algebraic (Kasa) circle fit: least squares on x^2+y^2+Dx+Ey+F=0."""
    points = _check_points(points, 3)
    mean, scale = _normalizer(points)
    q = (points - mean[:, None]) / scale
    x, y = q
    m = np.column_stack([x, y, np.ones_like(x)])
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise FitError("degenerate configuration for circle fit")
    sol, *_ = np.linalg.lstsq(m, -(x * x + y * y), rcond=None)
    return Conic(_denormalize([1.0, 0.0, 1.0, *sol], mean, scale))


def fit_ellipse_direct(points):
    """Ellipse-specific direct least-squares fit.

    Minimizes the algebraic error subject to ``4AC - B^2 = 1`` through the
    reduced generalized eigenproblem (Halir-Flusser partitioning), on
    centered and scaled coordinates.
    """
    points = _check_points(points, 5)
    mean, scale = _normalizer(points)
    q = (points - mean[:, None]) / scale
    sv = np.linalg.svd(q, compute_uv=False)
    if sv[-1] <= 1e-9 * sv[0]:
        raise FitError("collinear points")
    x, y = q
    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError:
        raise FitError("singular scatter matrix") from None
    m = s1 + s2 @ t
    # premultiply by the inverse of the 3x3 constraint block
    m = np.vstack([m[2] / 2.0, -m[1], m[0] / 2.0])
    evals, evecs = np.linalg.eig(m)
    evecs = np.real(evecs)
    cond = 4 * evecs[0] * evecs[2] - evecs[1] ** 2
    ok = np.flatnonzero((cond > 0) & np.isfinite(np.real(evals)))
    if ok.size == 0:
        raise FitError("no elliptical solution")
    a1 = evecs[:, ok[np.argmin(np.abs(np.real(evals[ok])))]]
    coef = np.concatenate([a1, t @ a1])
    conic = Conic(_denormalize(coef, mean, scale))
    if conic.discriminant >= 0:
        raise FitError("fit is not an ellipse")
    return conic


def fit_conic_general(points):
    """Unconstrained algebraic conic fit (smallest right singular vector)."""
    points = _check_points(points, 5)
    mean, scale = _normalizer(points)
    q = (points - mean[:, None]) / scale
    _, _, vt = np.linalg.svd(design_matrix(q), full_matrices=True)
    return Conic(_denormalize(vt[-1], mean, scale))


FITTERS = {
    "line": fit_line_tls,
    "circle": fit_circle_algebraic,
    "ellipse": fit_ellipse_direct,
    "conic": fit_conic_general,
}


# --- scene generation --------------------------------------------------------


@dataclass
class SceneSpec:
    """Scene recipe: ordered structures, noise level, outliers, box and seed."""

    structures: list = field(default_factory=lambda: [
        ("line", 100), ("ellipse", 100), ("ellipse", 100), ("circle", 100)])
    noise_sigma: float = 0.05
    outliers: int = 0
    domain_box: tuple = DEFAULT_BOX
    seed: int = 0

    def __post_init__(self):
        self.structures = [(str(k), int(n)) for k, n in self.structures]
        self.domain_box = tuple(float(v) for v in self.domain_box)
        self.validate()

    def validate(self):
        if not self.structures:
            raise ValidationError("scene needs at least one structure")
        for kind, n in self.structures:
            if kind not in KINDS:
                raise ValidationError(f"unknown structure kind {kind!r}")
            if n < MIN_SUPPORT[kind]:
                raise ValidationError(
                    f"{kind} needs at least {MIN_SUPPORT[kind]} points, got {n}")
        if not self.noise_sigma >= 0:
            raise ValidationError("noise_sigma must be nonnegative")
        if self.outliers < 0:
            raise ValidationError("outliers must be nonnegative")
        x0, x1, y0, y1 = self.domain_box
        if not (x1 > x0 and y1 > y0):
            raise ValidationError("empty domain box")

    @classmethod
    def lce(cls, points_per_structure=100, noise_sigma=0.05, seed=0, **kw):
        n = points_per_structure
        return cls([("line", n), ("ellipse", n), ("ellipse", n), ("circle", n)],
                   noise_sigma=noise_sigma, seed=seed, **kw)

    @classmethod
    def multimodel(cls, kind, n_models, points_per_structure=100,
                   noise_sigma=0.05, seed=0, **kw):
        return cls([(kind, points_per_structure)] * n_models,
                   noise_sigma=noise_sigma, seed=seed, **kw)

    def to_dict(self):
        return {
            "structures": [[k, n] for k, n in self.structures],
            "noise_sigma": self.noise_sigma,
            "outliers": self.outliers,
            "domain_box": list(self.domain_box),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj):
        unknown = set(obj) - {"structures", "noise_sigma", "outliers", "domain_box", "seed"}
        if unknown:
            raise ValidationError(f"unknown scene keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Structure:
    """A sampled curve: its kind, conic and sampling parameters."""

    kind: str
    conic: Conic
    params: dict

    def sample(self, n, rng):
        p = self.params
        if self.kind == "line":
            s = rng.uniform(0.0, 1.0, n)
            return p["start"][:, None] + s * (p["end"] - p["start"])[:, None]
        t = rng.uniform(0.0, 2 * np.pi, n)
        if self.kind == "circle":
            return p["center"][:, None] + p["radius"] * np.vstack([np.cos(t), np.sin(t)])
        ct, st = np.cos(p["theta"]), np.sin(p["theta"])
        u = p["a"] * np.cos(t)
        v = p["b"] * np.sin(t)
        return p["center"][:, None] + np.vstack([ct * u - st * v, st * u + ct * v])

    def distance(self, points):
        p = self.params
        if self.kind == "ellipse":
            return _ellipse_distance(points, p["center"], p["a"], p["b"], p["theta"])
        return conic_distance(points, self.conic)


def _clip_line_to_box(p, q, box):
    """Segment of the infinite line through p and q inside the box."""
    x0, x1, y0, y1 = box
    d = q - p
    lo, hi = -np.inf, np.inf
    for k, (a, b) in enumerate(((x0, x1), (y0, y1))):
        if abs(d[k]) < 1e-15:
            if not a <= p[k] <= b:
                return None
            continue
        t1, t2 = (a - p[k]) / d[k], (b - p[k]) / d[k]
        lo, hi = max(lo, min(t1, t2)), min(hi, max(t1, t2))
    if hi - lo <= 0:
        return None
    return p + lo * d, p + hi * d


def random_structure(kind, rng, box=DEFAULT_BOX):
    x0, x1, y0, y1 = box
    for _ in range(RETRY_BUDGET):
        if kind == "line":
            p = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
            q = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
            if np.linalg.norm(q - p) < 1e-6:
                continue
            seg = _clip_line_to_box(p, q, box)
            if seg is None:
                continue
            d = q - p
            normal = np.array([-d[1], d[0]]) / np.linalg.norm(d)
            return Structure("line", Conic.line(normal, -normal @ p),
                             {"start": seg[0], "end": seg[1]})
        if kind == "circle":
            c = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
            r = rng.uniform(*RADIUS_RANGE)
            if c[0] - r < x0 or c[0] + r > x1 or c[1] - r < y0 or c[1] + r > y1:
                continue
            return Structure("circle", Conic.circle(c, r), {"center": c, "radius": r})
        if kind == "ellipse":
            c = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
            a, b = rng.uniform(*RADIUS_RANGE, size=2)
            theta = rng.uniform(0.0, np.pi)
            if max(a, b) < MIN_AXIS_RATIO * min(a, b):
                continue
            hw = np.sqrt((a * np.cos(theta)) ** 2 + (b * np.sin(theta)) ** 2)
            hh = np.sqrt((a * np.sin(theta)) ** 2 + (b * np.cos(theta)) ** 2)
            if c[0] - hw < x0 or c[0] + hw > x1 or c[1] - hh < y0 or c[1] + hh > y1:
                continue
            return Structure("ellipse", Conic.ellipse(c, a, b, theta),
                             {"center": c, "a": a, "b": b, "theta": theta})
        raise ValidationError(f"unknown structure kind {kind!r}")
    raise GenerationError(
        f"could not place a {kind} inside the domain box after {RETRY_BUDGET} tries")


def generate_scene(spec, name=None):
    """Sample a scene; returns the :class:`Instance` and its structures."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    structures, chunks, labels = [], [], []
    for k, (kind, n) in enumerate(spec.structures):
        s = random_structure(kind, rng, spec.domain_box)
        pts = s.sample(n, rng)
        if spec.noise_sigma > 0:
            pts = pts + rng.normal(0.0, spec.noise_sigma, size=pts.shape)
        structures.append(s)
        chunks.append(pts)
        labels.append(np.full(n, k))
    if spec.outliers:
        x0, x1, y0, y1 = spec.domain_box
        out = np.vstack([rng.uniform(x0, x1, spec.outliers),
                         rng.uniform(y0, y1, spec.outliers)])
        chunks.append(out)
        labels.append(np.full(spec.outliers, len(spec.structures)))
    points = np.hstack(chunks)
    labels = np.concatenate(labels)
    perm = rng.permutation(points.shape[1])
    kinds = ",".join(k for k, _ in spec.structures)
    inst = Instance(points[:, perm], labels[perm],
                    name=name or f"scene_{spec.seed}",
                    meta={"source": "synthetic", "kinds": kinds,
                          "seed": str(spec.seed), "noise_sigma": repr(spec.noise_sigma)})
    return inst, structures


def make_lce_instance(spec, name=None):
    """Lines/circles/ellipses scene: one line, two ellipses and one circle."""
    kinds = sorted(k for k, _ in spec.structures)
    if kinds != ["circle", "ellipse", "ellipse", "line"]:
        raise ValidationError(
            "an LCE scene has exactly one line, two ellipses and one circle")
    return generate_scene(spec, name)[0]


def make_multimodel_instance(spec, name=None):
    """Scene with 2..6 structures of a single kind."""
    kinds = {k for k, _ in spec.structures}
    if len(kinds) != 1:
        raise ValidationError("multi-model scenes use a single structure kind")
    if not 2 <= len(spec.structures) <= 6:
        raise ValidationError("multi-model scenes have 2 to 6 structures")
    return generate_scene(spec, name)[0]


# --- sequential RANSAC baseline ----------------------------------------------


def _ransac(points, kind, threshold, iters, rng):
    fit = FITTERS[kind]
    m = MIN_SUPPORT[kind]
    n = points.shape[1]
    best, best_count = None, -1
    for _ in range(iters):
        idx = rng.choice(n, size=m, replace=False)
        try:
            model = fit(points[:, idx])
        except (FitError, np.linalg.LinAlgError, ValidationError):
            continue
        inliers = conic_distance(points, model, tol=1e-6) < threshold
        count = int(inliers.sum())
        if count > best_count:
            best, best_count = (model, inliers), count
    if best is None:
        raise FitError(f"RANSAC found no valid {kind} hypothesis")
    model, inliers = best
    if inliers.sum() >= m:
        try:
            refined = fit(points[:, inliers])
            ref_in = conic_distance(points, refined, tol=1e-6) < threshold
            if ref_in.sum() >= inliers.sum():
                model, inliers = refined, ref_in
        except (FitError, np.linalg.LinAlgError, ValidationError):
            pass
    return model, inliers


def sequential_fit(instance, schedule, inlier_threshold, ransac_iters, seed=0):
    """Greedy multi-type fitting: one RANSAC model at a time, inliers removed.

    Returns predicted labels numbered in schedule order. Points never claimed
    as inliers go to the nearest recovered model by geometric distance.
    """
    if inlier_threshold <= 0:
        raise ValueError("inlier_threshold must be positive")
    if ransac_iters < 1:
        raise FitError("ransac_iters must be at least 1")
    points = instance.points[:2] if isinstance(instance, Instance) else np.asarray(instance)
    rng = np.random.default_rng(seed)
    n = points.shape[1]
    labels = np.full(n, -1)
    remaining = np.arange(n)
    models = []
    for kind, count in schedule:
        if kind not in FITTERS:
            raise ValueError(f"unknown model kind {kind!r}")
        for _ in range(count):
            if remaining.size < MIN_SUPPORT[kind]:
                raise FitError(
                    f"only {remaining.size} points left for a minimal {kind} sample")
            model, inliers = _ransac(points[:, remaining], kind,
                                     inlier_threshold, ransac_iters, rng)
            labels[remaining[inliers]] = len(models)
            models.append(model)
            remaining = remaining[~inliers]
    if remaining.size:
        dists = np.vstack([conic_distance(points[:, remaining], m) for m in models])
        labels[remaining] = np.argmin(dists, axis=0)
    return labels
