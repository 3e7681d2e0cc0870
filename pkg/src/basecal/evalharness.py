"""Reconstruction-based accuracy evaluation.

Two experiment styles over repeat scans of a known shape (plane or
hemisphere): a *static* test fits each shot as captured, isolating camera
imaging noise; a *dynamic* test first maps each shot into the robot base
frame with its per-shot calibrated transform, so any calibration error
shows up as extra spread and bias. The absolute difference between the two
reports is the calibration's contribution.

Statistics per metric follow the range-of-values / standard deviation /
median / mean layout. All lengths are meters internally; rendering converts
to millimeters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, ShapeMismatchError, TooFewPointsError
from .geometry import RigidTransform
from .pointcloud import PointCloud, transform
from .registration import MatchParams, icp

__all__ = [
    "PlaneFit",
    "SphereFit",
    "TestReport",
    "fit_plane",
    "fit_sphere",
    "static_test",
    "dynamic_test",
    "offset_report",
    "format_comparison",
]

STAT_NAMES = ("rv", "sd", "median", "mean")


@dataclass(frozen=True)
class PlaneFit:
    normal: np.ndarray          # unit, oriented toward +Z
    offset: float               # plane is n . x = offset
    rms: float                  # RMS orthogonal residual (m)
    angle_to_z_deg: float       # in [0, 90]


@dataclass(frozen=True)
class SphereFit:
    center: np.ndarray
    radius: float
    rms: float                  # RMS radial residual (m)


@dataclass(frozen=True)
class TestReport:
    """Per-shot fit metrics plus their aggregate statistics.

    ``stats`` maps metric name -> {rv, sd, median, mean}; every statistic is
    recomputable from ``per_shot``.
    """

    shape: str                       # "plane" or "sphere"
    kind: str                        # "static", "dynamic" or "offset"
    per_shot: tuple[dict, ...]
    stats: dict

    def to_json_dict(self) -> dict:
        return {"shape": self.shape, "kind": self.kind,
                "per_shot": list(self.per_shot), "stats": self.stats}


def fit_plane(points: PointCloud) -> PlaneFit:
    """Total-least-squares plane through a cloud.

    The normal is the smallest-variance principal direction, signed toward
    +Z (ties toward +Y then +X); rms is the orthogonal residual.
    """
    if len(points) < 3:
        raise TooFewPointsError("fit_plane needs at least 3 points")
    c = points.centroid()
    centered = points.points - c
    cov = centered.T @ centered / len(points)
    w, v = np.linalg.eigh(cov)
    if w[1] <= max(w[2] * 1e-10, 1e-30):
        raise DegenerateGeometryError("points are collinear; plane is undefined")
    n = v[:, 0]
    for axis in (2, 1, 0):
        if abs(n[axis]) > 1e-12:
            if n[axis] < 0:
                n = -n
            break
    residual = centered @ n
    rms = float(np.sqrt(np.mean(residual**2)))
    angle = float(np.degrees(np.arccos(np.clip(n[2], -1.0, 1.0))))
    return PlaneFit(normal=n, offset=float(n @ c), rms=rms, angle_to_z_deg=angle)


_SPHERE_GN_STEPS = 10


def fit_sphere(points: PointCloud) -> SphereFit:
    """Least-squares sphere: algebraic seed plus Gauss-Newton refinement.

    The linearized fit ||p||^2 = 2 c.p + rho seeds up to ten Gauss-Newton
    steps on the geometric radial residual, which removes the bias the
    algebraic fit picks up on partial (hemisphere-only) coverage.
    """
    if len(points) < 4:
        raise TooFewPointsError("fit_sphere needs at least 4 points")
    p = points.points
    centered = p - p.mean(axis=0)
    cov = centered.T @ centered / len(points)
    w, _ = np.linalg.eigh(cov)
    if w[0] <= max(w[2] * 1e-10, 1e-30):
        raise DegenerateGeometryError("points are coplanar; sphere is undefined")

    a = np.column_stack([2.0 * p, np.ones(len(points))])
    b = (p**2).sum(axis=1)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    center = sol[:3]
    radius = float(np.sqrt(max(sol[3] + center @ center, 1e-30)))

    for _ in range(_SPHERE_GN_STEPS):
        delta = p - center
        dist = np.linalg.norm(delta, axis=1)
        dist = np.maximum(dist, 1e-12)
        resid = dist - radius
        jac = np.column_stack([-delta / dist[:, None], -np.ones(len(points))])
        step, *_ = np.linalg.lstsq(jac, -resid, rcond=None)
        center = center + step[:3]
        radius = float(radius + step[3])
        if np.linalg.norm(step) < 1e-14:
            break
    dist = np.linalg.norm(p - center, axis=1)
    rms = float(np.sqrt(np.mean((dist - radius) ** 2)))
    return SphereFit(center=center, radius=radius, rms=rms)


def _aggregate(values: np.ndarray) -> dict:
    return {
        "rv": float(values.max() - values.min()),
        "sd": float(values.std(ddof=1)) if values.size > 1 else 0.0,
        "median": float(np.median(values)),
        "mean": float(values.mean()),
    }


def _plane_metrics(fits) -> list[dict]:
    return [{"angle_deg": f.angle_to_z_deg, "rms_m": f.rms} for f in fits]


def _sphere_metrics(fits) -> list[dict]:
    centers = np.array([f.center for f in fits])
    mean_center = centers.mean(axis=0)
    dc = np.linalg.norm(centers - mean_center, axis=1)
    return [{
        "center_x_m": float(f.center[0]),
        "center_y_m": float(f.center[1]),
        "center_z_m": float(f.center[2]),
        "radius_m": f.radius,
        "rms_m": f.rms,
        "dc_m": float(dc[i]),
    } for i, f in enumerate(fits)]


def _build_report(fits, shape: str, kind: str) -> TestReport:
    per_shot = _plane_metrics(fits) if shape == "plane" else _sphere_metrics(fits)
    metric_names = per_shot[0].keys()
    stats = {
        name: _aggregate(np.array([row[name] for row in per_shot]))
        for name in metric_names
    }
    return TestReport(shape=shape, kind=kind, per_shot=tuple(per_shot), stats=stats)


def _fit(shot: PointCloud, shape: str):
    if shape == "plane":
        return fit_plane(shot)
    if shape == "sphere":
        return fit_sphere(shot)
    raise ValueError(f"unknown shape '{shape}'")


def static_test(shots, shape: str) -> TestReport:
    """Fit every shot as captured; spread measures pure imaging noise.

    Sphere shots additionally report DC, the distance of each fitted center
    to the mean center over all shots.
    """
    shots = list(shots)
    if len(shots) < 2:
        raise TooFewPointsError("static_test needs at least 2 shots")
    fits = [_fit(s, shape) for s in shots]
    return _build_report(fits, shape, "static")


def dynamic_test(shots, shape: str, refine_icp: bool = False,
                 params: MatchParams | None = None) -> TestReport:
    """Map each shot into the base frame with its transform, then fit.

    ``shots`` is a sequence of (cloud, to_base) where ``to_base`` maps that
    shot's camera frame into the robot base frame (kinematics composed with
    the calibration). With ``refine_icp`` every transformed shot is also
    ICP-registered onto the first one before fitting, which cancels the
    calibration error and serves as the ground-truth companion report.
    """
    shots = list(shots)
    if len(shots) < 2:
        raise TooFewPointsError("dynamic_test needs at least 2 shots")
    moved = [transform(cloud, to_base) for cloud, to_base in shots]
    if refine_icp:
        params = params or MatchParams()
        anchor = moved[0]
        refined = [anchor]
        for cloud in moved[1:]:
            res = icp(cloud, anchor, RigidTransform.identity(), params)
            refined.append(transform(cloud, res.transform))
        moved = refined
    fits = [_fit(c, shape) for c in moved]
    return _build_report(fits, shape, "dynamic")


def offset_report(dynamic: TestReport, static_: TestReport) -> TestReport:
    """|dynamic - static| per metric and statistic."""
    if dynamic.shape != static_.shape:
        raise ShapeMismatchError(
            f"shape mismatch: {dynamic.shape} vs {static_.shape}")
    if set(dynamic.stats) != set(static_.stats):
        raise ShapeMismatchError("reports cover different metric sets")
    stats = {
        metric: {
            stat: abs(dynamic.stats[metric][stat] - static_.stats[metric][stat])
            for stat in STAT_NAMES
        }
        for metric in dynamic.stats
    }
    return TestReport(shape=dynamic.shape, kind="offset", per_shot=(), stats=stats)


def _fmt(metric: str, value: float) -> str:
    scaled = value * 1000.0 if metric.endswith("_m") else value
    return f"{scaled:10.3f}"


def _label(metric: str) -> str:
    return metric.replace("_m", " (mm)").replace("_deg", " (deg)")


def format_comparison(static_: TestReport, dynamic: TestReport,
                      offset: TestReport) -> str:
    """Text table with static / dynamic / |offset| columns per metric."""
    lines = [f"{'':24s}{'Static':>12s}{'Dynamic':>12s}{'|Offset|':>12s}"]
    for metric in static_.stats:
        lines.append(_label(metric))
        for stat in STAT_NAMES:
            lines.append(
                f"  {stat:22s}"
                f"{_fmt(metric, static_.stats[metric][stat]):>12s}"
                f"{_fmt(metric, dynamic.stats[metric][stat]):>12s}"
                f"{_fmt(metric, offset.stats[metric][stat]):>12s}")
    return "\n".join(lines)
