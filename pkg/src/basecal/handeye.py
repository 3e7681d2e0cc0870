"""Hand-eye solvers and DH forward kinematics.

The single-movement identity chains three transforms to the identity:

    I = (base<-tcp) (tcp<-cam) (cam<-base)

so with the kinematic pose A = base<-tcp and the estimated base pose
B = cam<-base, the unknown X = tcp<-cam drops out in closed form,
X = A^-1 B^-1. A classical multi-motion AX = XB solver (axis least squares
for rotation, stacked linear system for translation) is included as a
baseline and cross-check.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    IllConditionedError,
    InsufficientMotionError,
    LengthMismatchError,
)
from .geometry import (
    RigidTransform,
    compose,
    inverse,
    quaternion_from_rotation,
    rotation_angle_deg,
)

__all__ = [
    "DhRow",
    "DhTable",
    "JointConfig",
    "MotionPair",
    "CalibrationResult",
    "forward_kinematics",
    "solve_single_shot_eye_in_hand",
    "solve_eye_to_hand",
    "solve_ax_xb",
]


@dataclass(frozen=True)
class DhRow:
    """Standard DH link parameters: a (m), alpha (rad), d (m), theta offset (rad)."""

    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0


@dataclass(frozen=True)
class DhTable:
    rows: tuple[DhRow, ...]

    def __post_init__(self):
        rows = tuple(self.rows)
        if not rows:
            raise ValueError("DH table needs at least one row")
        for r in rows:
            if not all(math.isfinite(v) for v in (r.a, r.alpha, r.d, r.theta_offset)):
                raise ValueError("DH parameters must be finite")
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return len(self.rows)

    @classmethod
    def from_json_dict(cls, obj: dict) -> "DhTable":
        return cls(tuple(
            DhRow(a=float(r["a"]), alpha=float(r["alpha"]), d=float(r["d"]),
                  theta_offset=float(r.get("theta_offset", 0.0)))
            for r in obj["rows"]))

    def to_json_dict(self) -> dict:
        return {"rows": [
            {"a": r.a, "alpha": r.alpha, "d": r.d, "theta_offset": r.theta_offset}
            for r in self.rows]}


@dataclass(frozen=True)
class JointConfig:
    """Joint angles in radians, one per DH row."""

    angles: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))

    def __len__(self) -> int:
        return len(self.angles)


@dataclass(frozen=True)
class MotionPair:
    """One relative robot motion A paired with the observed object motion B."""

    a: RigidTransform
    b: RigidTransform


@dataclass(frozen=True)
class CalibrationResult:
    """Solved hand-eye transform with loop-closure residuals."""

    mode: str  # "eye-in-hand" or "eye-to-hand"
    transform: RigidTransform
    residual_rotation_deg: float
    residual_translation_m: float
    inputs_digest: str

    def __post_init__(self):
        if self.mode not in ("eye-in-hand", "eye-to-hand"):
            raise ValueError(f"unknown mode '{self.mode}'")

    @property
    def inverse_transform(self) -> RigidTransform:
        return self.transform.inverse()

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "transform": self.transform.to_json_dict(),
            "inverse_transform": self.inverse_transform.to_json_dict(),
            "residual_rotation_deg": self.residual_rotation_deg,
            "residual_translation_m": self.residual_translation_m,
            "inputs_digest": self.inputs_digest,
        }


def _dh_matrix(row: DhRow, angle: float) -> RigidTransform:
    th = angle + row.theta_offset
    ct, st = math.cos(th), math.sin(th)
    ca, sa = math.cos(row.alpha), math.sin(row.alpha)
    r = np.array([
        [ct, -st * ca, st * sa],
        [st, ct * ca, -ct * sa],
        [0.0, sa, ca],
    ])
    t = np.array([row.a * ct, row.a * st, row.d])
    return RigidTransform(r, t)


def forward_kinematics(table: DhTable, q: "JointConfig | list | tuple") -> RigidTransform:
    """Base-to-TCP pose: the product of per-joint standard-DH matrices."""
    angles = q.angles if isinstance(q, JointConfig) else tuple(float(a) for a in q)
    if len(angles) != len(table):
        raise LengthMismatchError(
            f"{len(angles)} joint angles for a {len(table)}-row table")
    pose = RigidTransform.identity()
    for row, angle in zip(table.rows, angles):
        pose = pose @ _dh_matrix(row, angle)
    return pose


def _digest(*objs) -> str:
    payload = json.dumps(objs, sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def _loop_residual(a: RigidTransform, x: RigidTransform,
                   b: RigidTransform) -> tuple[float, float]:
    loop = compose(a, x, b)
    return (rotation_angle_deg(loop.rotation),
            float(np.linalg.norm(loop.translation)))


def solve_single_shot_eye_in_hand(base_to_tcp: RigidTransform,
                                  cam_to_base: RigidTransform) -> CalibrationResult:
    """Closed-form TCP-to-camera transform from one robot pose.

    X = A^-1 B^-1 with A the kinematic base<-tcp pose and B the estimated
    cam<-base pose; the residual reports how far A X B falls from identity
    (zero up to floating point for exact inputs).
    """
    x = compose(inverse(base_to_tcp), inverse(cam_to_base))
    rr, rt = _loop_residual(base_to_tcp, x, cam_to_base)
    return CalibrationResult(
        mode="eye-in-hand",
        transform=x,
        residual_rotation_deg=rr,
        residual_translation_m=rt,
        inputs_digest=_digest(base_to_tcp.to_json_dict(), cam_to_base.to_json_dict()),
    )


def solve_eye_to_hand(base_pose) -> CalibrationResult:
    """Eye-to-hand result: the estimated cam<-base pose is the answer.

    Accepts a BasePoseEstimate (or anything with ``cam_to_base``); the
    inverse (base<-cam) is exposed on the result.
    """
    x = base_pose.cam_to_base if hasattr(base_pose, "cam_to_base") else base_pose
    return CalibrationResult(
        mode="eye-to-hand",
        transform=x,
        residual_rotation_deg=0.0,
        residual_translation_m=0.0,
        inputs_digest=_digest(x.to_json_dict()),
    )


_MIN_AXIS_ANGLE_DEG = 1.0
_MAX_CONDITION = 1e8


def _rotation_vector(r: np.ndarray) -> np.ndarray:
    """Axis times angle, via the quaternion (stable near 0 and pi)."""
    w, x, y, z = quaternion_from_rotation(r)
    v = np.array([x, y, z])
    n = np.linalg.norm(v)
    if n < 1e-12:
        return np.zeros(3)
    angle = 2.0 * math.atan2(n, w)
    if angle > math.pi:
        angle -= 2.0 * math.pi
    return v / n * angle


def solve_ax_xb(pairs, mode: str = "eye-in-hand") -> CalibrationResult:
    """Classical AX = XB baseline over >= 2 motion pairs.

    Rotation: the conjugation A = X B X^-1 maps rotation vectors of B onto
    those of A, so R_X is the orthogonal least-squares fit between the two
    vector sets (axis formulation). Translation: stacked least squares on
    (R_A - I) t_X = R_X t_B - t_A. Exact on consistent noise-free input.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise InsufficientMotionError("need at least two motion pairs")
    vec_a = np.array([_rotation_vector(p.a.rotation) for p in pairs])
    vec_b = np.array([_rotation_vector(p.b.rotation) for p in pairs])
    norms = np.linalg.norm(vec_a, axis=1)
    usable = norms > 1e-9
    if usable.sum() < 2:
        raise InsufficientMotionError("fewer than two pairs carry rotation")
    axes = vec_a[usable] / norms[usable, None]
    best_spread = 0.0
    for i in range(len(axes)):
        for j in range(i + 1, len(axes)):
            c = min(1.0, abs(float(axes[i] @ axes[j])))
            best_spread = max(best_spread, math.degrees(math.acos(c)))
    if best_spread <= _MIN_AXIS_ANGLE_DEG:
        raise InsufficientMotionError(
            f"rotation axes span only {best_spread:.3f} deg; need > "
            f"{_MIN_AXIS_ANGLE_DEG} deg")

    h = vec_b[usable].T @ vec_a[usable]
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r_x = vt.T @ np.diag([1.0, 1.0, d]) @ u.T

    c_rows = np.vstack([p.a.rotation - np.eye(3) for p in pairs])
    d_vec = np.concatenate([r_x @ p.b.translation - p.a.translation for p in pairs])
    cond = np.linalg.cond(c_rows)
    if cond > _MAX_CONDITION:
        raise IllConditionedError(f"translation system condition {cond:.3g}")
    t_x, *_ = np.linalg.lstsq(c_rows, d_vec, rcond=None)
    x = RigidTransform(r_x, t_x)

    rot_res = [rotation_angle_deg(p.a.rotation @ r_x, r_x @ p.b.rotation)
               for p in pairs]
    trans_res = [float(np.linalg.norm((p.a.rotation - np.eye(3)) @ t_x
                                      - (r_x @ p.b.translation - p.a.translation)))
                 for p in pairs]
    return CalibrationResult(
        mode=mode,
        transform=x,
        residual_rotation_deg=float(np.mean(rot_res)),
        residual_translation_m=float(np.mean(trans_res)),
        inputs_digest=_digest([[p.a.to_json_dict(), p.b.to_json_dict()]
                               for p in pairs]),
    )
