"""Evaluation metrics for transforms, detections and reconstructions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    EmptyInputError,
    GimbalLockError,
    LengthMismatchError,
    NoMatchesError,
    ZeroVolumeError,
)
from .geometry import to_euler
from .pointcloud import Aabb, PointCloud

__all__ = [
    "TransformError",
    "SurfaceRms",
    "rre",
    "rte",
    "re",
    "rmse_transform",
    "iou3d",
    "rms_to_surface",
]


@dataclass(frozen=True)
class TransformError:
    """Aggregate error of a set of estimated transforms against ground truth."""

    rmse_r: float   # RMS over all 9 rotation-entry differences
    rmse_t: float   # RMS over translation components (m)
    rre: float      # mean geodesic rotation error (deg)
    rte: float      # mean translation error (m)
    re: float       # mean Euler-vector error (deg)

    def to_json_dict(self) -> dict:
        return {"rmse_r": self.rmse_r, "rmse_t": self.rmse_t,
                "rre_deg": self.rre, "rte_m": self.rte, "re_deg": self.re}


def rre(r_est, r_gt) -> float:
    """Relative rotation error: geodesic angle in degrees.

    arccos((trace(R_est^T R_gt) - 1) / 2), argument clamped to [-1, 1] so
    identical rotations give exactly zero instead of NaN.
    """
    rel = np.asarray(r_est, dtype=float).T @ np.asarray(r_gt, dtype=float)
    c = (np.trace(rel) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def rte(t_est, t_gt) -> float:
    """Relative translation error: Euclidean distance in meters."""
    diff = np.asarray(t_est, dtype=float) - np.asarray(t_gt, dtype=float)
    return float(np.linalg.norm(diff))


def re(r_est, r_gt) -> float:
    """Euler-vector rotation error in degrees.

    Norm of the difference of the (beta, alpha, gamma) vectors under the
    Z-Y-X convention. Convention-dependent by construction; raises on
    gimbal lock where the vectors are not unique.
    """
    e_est = to_euler(r_est)
    e_gt = to_euler(r_gt)
    if e_est.degenerate or e_gt.degenerate:
        raise GimbalLockError("Euler angles are degenerate for this rotation")
    return math.degrees(float(np.linalg.norm(e_est.vector - e_gt.vector)))


def rmse_transform(est, gt) -> TransformError:
    """Set-level RMSE plus mean per-pair metrics.

    ``rmse_r`` pools all 9 rotation-entry differences of every pair;
    ``rmse_t`` pools all translation components; the remaining fields are
    means of the per-pair rre/rte/re values.
    """
    est = list(est)
    gt = list(gt)
    if not est:
        raise EmptyInputError("rmse_transform needs at least one pair")
    if len(est) != len(gt):
        raise LengthMismatchError(f"{len(est)} estimates vs {len(gt)} ground truths")
    sq_r = []
    sq_t = []
    rres = []
    rtes = []
    res = []
    for e, g in zip(est, gt):
        sq_r.append((e.rotation - g.rotation) ** 2)
        sq_t.append((e.translation - g.translation) ** 2)
        rres.append(rre(e.rotation, g.rotation))
        rtes.append(rte(e.translation, g.translation))
        res.append(re(e.rotation, g.rotation))
    return TransformError(
        rmse_r=float(np.sqrt(np.mean(sq_r))),
        rmse_t=float(np.sqrt(np.mean(sq_t))),
        rre=float(np.mean(rres)),
        rte=float(np.mean(rtes)),
        re=float(np.mean(res)),
    )


def iou3d(a: Aabb, b: Aabb) -> float:
    """Volume intersection-over-union of two axis-aligned boxes."""
    if a.volume == 0.0 or b.volume == 0.0:
        raise ZeroVolumeError("iou3d needs boxes with positive volume")
    lo = np.maximum(a.min, b.min)
    hi = np.minimum(a.max, b.max)
    if np.any(hi <= lo):
        return 0.0
    inter = float(np.prod(hi - lo))
    return inter / (a.volume + b.volume - inter)


@dataclass(frozen=True)
class SurfaceRms:
    """Gated nearest-neighbor residual between two clouds.

    ``rms`` is the square root of the mean squared matched distance (m);
    ``mean_squared`` keeps the literal mean of squares (m^2) for anyone who
    wants the un-rooted figure.
    """

    rms: float
    mean_squared: float
    matched: int
    excluded: int


def rms_to_surface(points: PointCloud, nn_cloud: PointCloud, tau: float) -> SurfaceRms:
    """RMS 1-NN distance from ``points`` to ``nn_cloud`` under the gate tau.

    Points whose nearest neighbor is at distance >= tau are excluded from
    the mean and counted in the result.
    """
    if len(points) == 0 or len(nn_cloud) == 0:
        raise EmptyInputError("rms_to_surface needs two non-empty clouds")
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    workers = -1 if len(points) >= 4000 else 1
    d, _ = cKDTree(nn_cloud.points).query(points.points, workers=workers)
    mask = d < tau
    matched = int(mask.sum())
    if matched == 0:
        raise NoMatchesError(f"no point matched under tau = {tau}")
    mean_sq = float(np.mean(d[mask] ** 2))
    return SurfaceRms(rms=math.sqrt(mean_sq), mean_squared=mean_sq,
                      matched=matched, excluded=int(len(points) - matched))
