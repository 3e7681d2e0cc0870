"""Rigid-transform algebra: SE(3) values, Euler angles, rotation averaging.

Conventions used throughout the package:

* A :class:`RigidTransform` ``T`` maps points from its "source" frame into
  its "target" frame: ``p' = R @ p + t``. Composition ``compose(a, b)``
  applies ``b`` first, i.e. it equals the 4x4 homogeneous product ``a @ b``.
* Rotations are 3x3 orthonormal matrices with determinant +1, translations
  are 3-vectors in meters.
* Euler angles use the intrinsic Z-Y-X factorization
  ``R = Rz(alpha) @ Ry(beta) @ Rx(gamma)`` with ``beta`` in (-pi/2, pi/2)
  outside gimbal lock.

All values here are immutable; every function is pure and thread-safe.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, GimbalLockError

__all__ = [
    "RigidTransform",
    "EulerAngles",
    "UnitQuaternion",
    "compose",
    "inverse",
    "rot_x",
    "rot_y",
    "rot_z",
    "rotation_about_axis",
    "to_euler",
    "from_euler",
    "average_rotations",
    "nearest_rotation",
    "normalize_rows",
]

_ORTHONORMALITY_TOL = 1e-6


def _as_rotation(m) -> np.ndarray:
    r = np.asarray(m, dtype=float)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("rotation contains non-finite entries")
    return r


def _check_orthonormal(r: np.ndarray, tol: float = _ORTHONORMALITY_TOL) -> None:
    err = np.linalg.norm(r.T @ r - np.eye(3))
    if err > tol:
        raise ValueError(f"matrix is not orthonormal (||R^T R - I|| = {err:.3e})")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError(f"matrix determinant is {np.linalg.det(r):.6f}, expected +1")


@dataclass(frozen=True)
class RigidTransform:
    """An SE(3) element: rotation (3x3) plus translation (3,) in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _as_rotation(self.rotation)
        _check_orthonormal(r)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation contains non-finite entries")
        r = r.copy()
        t = t.copy()
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def unchecked(cls, rotation, translation) -> "RigidTransform":
        """Build without the orthonormality check.

        Only for deliberately non-rigid matrices (e.g. the row-normalized
        rotation variant); everything downstream assumes rigidity, so use
        sparingly.
        """
        self = object.__new__(cls)
        r = np.array(rotation, dtype=float).reshape(3, 3)
        t = np.array(translation, dtype=float).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        return self

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"homogeneous matrix must be 4x4, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        """The 4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Map one point (3,) or a stack (N, 3) into the target frame."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def to_json_dict(self) -> dict:
        return {"R": [list(row) for row in self.rotation.tolist()],
                "t": list(self.translation.tolist())}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "RigidTransform":
        r = np.asarray(obj["R"], dtype=float).reshape(3, 3)
        return cls(r, obj["t"])

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RigidTransform":
        return cls.from_json_dict(json.loads(text))

    def __repr__(self):
        t = np.array2string(self.translation, precision=6, suppress_small=True)
        return f"RigidTransform(t={t}, R=...)"


@dataclass(frozen=True)
class EulerAngles:
    """Intrinsic Z-Y-X Euler angles in radians.

    ``degenerate`` is set when the extraction hit gimbal lock; alpha then
    carries the merged Z+X angle and gamma is zero by convention.
    """

    alpha: float  # about Z
    beta: float   # about Y
    gamma: float  # about X
    degenerate: bool = False

    @property
    def vector(self) -> np.ndarray:
        """The (beta, alpha, gamma) vector used by rotation-error metrics."""
        return np.array([self.beta, self.alpha, self.gamma])


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion, scalar-first (w, x, y, z); q and -q are the same rotation."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if not math.isfinite(n) or abs(n - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm is {n}, expected 1")

    @classmethod
    def from_rotation(cls, r) -> "UnitQuaternion":
        q = quaternion_from_rotation(r)
        return cls(*q)

    def to_rotation(self) -> np.ndarray:
        return rotation_from_quaternion(np.array([self.w, self.x, self.y, self.z]))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])


def quaternion_from_rotation(r) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w, x, y, z), branch-stable."""
    r = _as_rotation(r)
    tr = np.trace(r)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        w = (r[2, 1] - r[1, 2]) / s
        x = 0.25 * s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        y = 0.25 * s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
        z = 0.25 * s
    q = np.array([w, x, y, z])
    return q / np.linalg.norm(q)


def rotation_from_quaternion(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def compose(a: RigidTransform, b: RigidTransform, *rest: RigidTransform) -> RigidTransform:
    """Chain transforms left to right: compose(a, b, c) applies c first."""
    out = a @ b
    for nxt in rest:
        out = out @ nxt
    return out


def inverse(t: RigidTransform) -> RigidTransform:
    """Inverse transform: rotation R^T, translation -R^T t."""
    return t.inverse()


def _rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_x(theta: float) -> RigidTransform:
    return RigidTransform(_rx(theta), np.zeros(3))


def rot_y(theta: float) -> RigidTransform:
    return RigidTransform(_ry(theta), np.zeros(3))


def rot_z(theta: float) -> RigidTransform:
    """Right-handed rotation about Z, zero translation."""
    return RigidTransform(_rz(theta), np.zeros(3))


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    u = np.asarray(axis, dtype=float).reshape(3)
    n = np.linalg.norm(u)
    if n == 0.0:
        raise ValueError("rotation axis must be non-zero")
    u = u / n
    k = np.array([[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


_GIMBAL_EPS = 1e-8


def to_euler(r, *, r21_gamma: bool = False) -> EulerAngles:
    """Extract intrinsic Z-Y-X Euler angles from a rotation matrix.

    beta  = atan2(-R31, sqrt(R11^2 + R21^2))
    alpha = atan2(R21 / cos beta, R11 / cos beta)
    gamma = atan2(R32 / cos beta, R33 / cos beta)

    ``r21_gamma`` switches the gamma numerator from R32 to R21; some
    published rotation-error figures use that variant, but it does not
    invert :func:`from_euler`, so it is off by default.

    Near |cos beta| = 0 the Z and X angles are not separable; the result is
    flagged ``degenerate`` with gamma fixed at zero and alpha carrying the
    merged angle.
    """
    r = _as_rotation(r)
    cb = math.sqrt(r[0, 0] ** 2 + r[1, 0] ** 2)
    beta = math.atan2(-r[2, 0], cb)
    if cb < _GIMBAL_EPS:
        # gimbal lock: only alpha -/+ gamma is observable
        if r[2, 0] < 0:  # beta = +pi/2
            alpha = -math.atan2(r[0, 1], r[1, 1])
        else:            # beta = -pi/2
            alpha = math.atan2(-r[0, 1], r[1, 1])
        return EulerAngles(alpha=alpha, beta=beta, gamma=0.0, degenerate=True)
    alpha = math.atan2(r[1, 0] / cb, r[0, 0] / cb)
    if r21_gamma:
        gamma = math.atan2(r[1, 0] / cb, r[2, 2] / cb)
    else:
        gamma = math.atan2(r[2, 1] / cb, r[2, 2] / cb)
    return EulerAngles(alpha=alpha, beta=beta, gamma=gamma)


def from_euler(angles: EulerAngles | tuple[float, float, float]) -> np.ndarray:
    """Rotation matrix Rz(alpha) @ Ry(beta) @ Rx(gamma)."""
    if isinstance(angles, EulerAngles):
        a, b, g = angles.alpha, angles.beta, angles.gamma
    else:
        a, b, g = angles
    return _rz(a) @ _ry(b) @ _rx(g)


def average_rotations(rotations, weights=None) -> np.ndarray:
    """Weighted chordal mean of rotation matrices.

    Uses the dominant eigenvector of the weighted quaternion outer-product
    sum, which is invariant to the sign of each input quaternion and to
    uniform weight scaling. Returns an orthonormal 3x3 matrix.
    """
    rotations = list(rotations)
    if not rotations:
        raise EmptyInputError("average_rotations needs at least one rotation")
    if weights is None:
        w = np.ones(len(rotations))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(rotations),):
            raise ValueError("weights length must match rotations")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must sum to a positive value")
    acc = np.zeros((4, 4))
    for rot, wi in zip(rotations, w):
        q = quaternion_from_rotation(rot)
        acc += wi * np.outer(q, q)
    eigvals, eigvecs = np.linalg.eigh(acc)
    q_mean = eigvecs[:, np.argmax(eigvals)]
    return rotation_from_quaternion(q_mean)


def nearest_rotation(m) -> np.ndarray:
    """Project a near-rotation 3x3 matrix onto SO(3) via SVD."""
    m = np.asarray(m, dtype=float).reshape(3, 3)
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def normalize_rows(m) -> np.ndarray:
    """Scale each row of a 3x3 matrix to unit length.

    This is *not* an orthonormalization; the result is generally not a
    rotation matrix. Kept only as the literal variant behind
    ``row_normalize`` switches.
    """
    m = np.asarray(m, dtype=float).reshape(3, 3)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero row")
    return m / norms


def rotation_angle_deg(r_a, r_b=None) -> float:
    """Geodesic angle in degrees between two rotations (or from identity)."""
    a = _as_rotation(r_a)
    rel = a if r_b is None else a.T @ _as_rotation(r_b)
    c = (np.trace(rel) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))
