"""6D pose of the robot base in the camera frame.

Chain per shot: crop the scan to the detection box, register the RoI
against the (pre-adjusted) reference model, re-express the alignment in the
raw reference frame, then assemble the camera-to-base transform. The base
frame equals the reference frame up to the first-joint rotation, so the
assembled rotation multiplies by Rz(-theta1); the translation is where the
reference origin (the bottom of the base) lands in the camera frame.

Multi-shot runs keep only shots whose overlap ratio clears a threshold and
average the survivors (chordal rotation mean, arithmetic translation mean).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AllShotsRejectedError, BasecalError, RoiTooSparseError
from .geometry import (
    RigidTransform,
    average_rotations,
    nearest_rotation,
    normalize_rows,
    rot_z,
)
from .pointcloud import Aabb, PointCloud, crop
from .registration import MatchParams, RegistrationResult, register

__all__ = [
    "ReferenceModel",
    "BasePoseEstimate",
    "REFERENCE_ORIGIN",
    "extract_roi",
    "estimate_cam_to_ref",
    "assemble_cam_to_base",
    "filtered_base_pose",
]

# homogeneous origin of the reference model: the bottom of the robot base
REFERENCE_ORIGIN = np.array([0.0, 0.0, 0.0, 1.0])

MIN_ROI_POINTS = 100
DEFAULT_OR_KEEP_FACTOR = 0.85


@dataclass(frozen=True)
class ReferenceModel:
    """Reference base cloud plus the rigid adjustment back to the raw frame.

    Any scaling must already be baked into ``cloud`` (record the factor in
    ``scale_baked``); ``adjust`` maps raw-reference coordinates into the
    cloud's (adjusted) frame and must be rigid.
    """

    cloud: PointCloud
    adjust: RigidTransform = field(default_factory=RigidTransform.identity)
    scale_baked: float = 1.0


@dataclass(frozen=True)
class BasePoseEstimate:
    """Camera-to-base transform with filter provenance."""

    cam_to_base: RigidTransform
    overlap_ratio: float
    theta1: float
    shots_used: int
    ambiguous: bool = False
    shot_log: tuple[dict, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "cam_to_base": self.cam_to_base.to_json_dict(),
            "overlap_ratio": self.overlap_ratio,
            "theta1": self.theta1,
            "shots_used": self.shots_used,
            "ambiguous": self.ambiguous,
            "shots": list(self.shot_log),
        }


def extract_roi(scan: PointCloud, box: Aabb,
                min_points: int = MIN_ROI_POINTS) -> PointCloud:
    """Crop the scan to the detection box; reject boxes too sparse to register."""
    roi = crop(scan, box)
    if len(roi) < min_points:
        raise RoiTooSparseError(
            f"RoI holds {len(roi)} points, need >= {min_points}")
    return roi


def estimate_cam_to_ref(roi: PointCloud, model: ReferenceModel,
                        params: MatchParams = MatchParams()) -> RegistrationResult:
    """Pose of the raw reference frame in the camera frame.

    Registration maps camera-frame RoI points onto the model cloud; its
    inverse is the camera<-adjusted-reference pose, which ``model.adjust``
    carries back to the raw reference frame. The returned result holds that
    camera<-reference transform in place of the raw registration transform.
    """
    if len(roi) < MIN_ROI_POINTS:
        raise RoiTooSparseError(
            f"RoI holds {len(roi)} points, need >= {MIN_ROI_POINTS}")
    result = register(roi, model.cloud, params)
    cam_to_ref = result.transform.inverse() @ model.adjust
    return replace(result, transform=cam_to_ref)


def assemble_cam_to_base(cam_to_ref: RigidTransform, theta1: float, *,
                         row_normalize: bool = False) -> RigidTransform:
    """Camera-to-base transform from the camera-to-reference pose.

    Translation is where the reference origin lands in the camera frame
    (exactly the translation column). Rotation is the orthonormalized
    camera-to-reference rotation times Rz(-theta1), undoing the first-joint
    angle present in the scan but not in the model. ``row_normalize``
    switches the orthonormalization to literal per-row scaling, which does
    not generally return a rotation matrix; the result is then built
    unchecked.
    """
    t = cam_to_ref.matrix @ REFERENCE_ORIGIN
    if row_normalize:
        r = normalize_rows(cam_to_ref.rotation) @ rot_z(-theta1).rotation
        return RigidTransform.unchecked(r, t[:3])
    r = nearest_rotation(cam_to_ref.rotation) @ rot_z(-theta1).rotation
    return RigidTransform(r, t[:3])


def filtered_base_pose(shots, box: Aabb, model: ReferenceModel, theta1: float,
                       params: MatchParams = MatchParams(),
                       or_threshold: float | None = None) -> BasePoseEstimate:
    """Run the per-shot chain and average the high-overlap survivors.

    ``or_threshold`` is an absolute overlap floor; by default shots within
    85% of the best observed overlap are kept (absolute overlap depends on
    crop completeness, so a relative rule travels better across setups).
    Shots that fail anywhere in the chain are logged and skipped.
    """
    shots = list(shots)
    if not shots:
        raise AllShotsRejectedError("no shots supplied")

    estimates: list[tuple[int, RigidTransform, float, bool]] = []
    log: list[dict] = []
    for i, shot in enumerate(shots):
        try:
            roi = extract_roi(shot, box)
            res = estimate_cam_to_ref(roi, model, params)
            pose = assemble_cam_to_base(res.transform, theta1)
        except BasecalError as exc:
            log.append({"shot": i, "kept": False, "error": str(exc)})
            continue
        estimates.append((i, pose, res.overlap_ratio, res.ambiguous))
        log.append({"shot": i, "kept": False, "overlap_ratio": res.overlap_ratio,
                    "ambiguous": res.ambiguous})
    if not estimates:
        raise AllShotsRejectedError("every shot failed before filtering")

    best = max(ov for _, _, ov, _ in estimates)
    threshold = or_threshold if or_threshold is not None else DEFAULT_OR_KEEP_FACTOR * best
    kept = [(i, pose, ov, amb) for i, pose, ov, amb in estimates if ov >= threshold]
    if not kept:
        raise AllShotsRejectedError(
            f"no shot reached overlap threshold {threshold:.3f}")
    kept_ids = {i for i, _, _, _ in kept}
    for entry in log:
        if entry["shot"] in kept_ids:
            entry["kept"] = True

    rotation = average_rotations([pose.rotation for _, pose, _, _ in kept])
    translation = np.mean([pose.translation for _, pose, _, _ in kept], axis=0)
    return BasePoseEstimate(
        cam_to_base=RigidTransform(rotation, translation),
        overlap_ratio=float(np.mean([ov for _, _, ov, _ in kept])),
        theta1=float(theta1),
        shots_used=len(kept),
        ambiguous=any(amb for _, _, _, amb in kept),
        shot_log=tuple(log),
    )


def reference_frame_pose(cam_to_base: RigidTransform, theta1: float) -> RigidTransform:
    """Inverse bookkeeping helper: camera-to-reference from camera-to-base.

    Useful when planting synthetic scenes: a scan taken at first-joint angle
    theta1 shows the model geometry rotated by Rz(theta1) about the base Z
    axis, so cam_to_ref = cam_to_base @ Rz(theta1).
    """
    return cam_to_base @ rot_z(theta1)
