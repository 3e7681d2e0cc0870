"""Synthetic partial-view generation with exact ground-truth poses.

Given a reference model cloud, simulate camera viewpoints on an upper
hemisphere shell, keep only the points visible from each viewpoint
(spherical-flipping hidden-point removal), and scatter each partial view
through random rigid motions whose exact inverses are stored as ground
truth. Everything is a pure function of (model, parameters, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import InvalidRangeError, TooFewPointsError, ViewpointInsideModelError
from .geometry import RigidTransform, rotation_about_axis
from .pointcloud import PointCloud, load, save, transform

__all__ = [
    "Viewpoint",
    "DatasetRecord",
    "sample_viewpoints",
    "hidden_point_removal",
    "augment",
    "generate_dataset",
    "make_base_model",
]

ELEVATION_BAND_DEG = (10.0, 80.0)
HPR_FLIP_RADIUS_FACTOR = 1000.0
DEFAULT_RADIUS_FACTORS = (2.2, 3.5)


@dataclass(frozen=True)
class Viewpoint:
    """A simulated camera placement: position, aim point, roll hint."""

    position: np.ndarray
    look_at: np.ndarray
    up_hint: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        tgt = np.asarray(self.look_at, dtype=float).reshape(3)
        up = np.asarray(self.up_hint, dtype=float).reshape(3)
        view = tgt - pos
        if np.linalg.norm(view) == 0:
            raise ValueError("viewpoint position equals its look_at target")
        if np.linalg.norm(np.cross(view, up)) < 1e-12 * np.linalg.norm(view) * np.linalg.norm(up):
            raise ValueError("up_hint is parallel to the view direction")
        for arr in (pos, tgt, up):
            arr.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "look_at", tgt)
        object.__setattr__(self, "up_hint", up)

    def camera_pose(self) -> RigidTransform:
        """Transform mapping world/model points into this camera's frame.

        Camera convention: +Z looks from the position toward look_at.
        """
        z = self.look_at - self.position
        z = z / np.linalg.norm(z)
        x = np.cross(self.up_hint, z)
        x = x / np.linalg.norm(x)
        y = np.cross(z, x)
        r = np.stack([x, y, z])  # rows: camera axes in world coords
        return RigidTransform(r, -r @ self.position)

    def to_json_dict(self) -> dict:
        return {
            "position": list(self.position.tolist()),
            "look_at": list(self.look_at.tolist()),
            "up_hint": list(self.up_hint.tolist()),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Viewpoint":
        return cls(np.asarray(obj["position"], dtype=float),
                   np.asarray(obj["look_at"], dtype=float),
                   np.asarray(obj["up_hint"], dtype=float))


@dataclass(frozen=True)
class DatasetRecord:
    """One augmented partial view plus its exact pose back to the reference."""

    source: PointCloud
    reference_id: str
    gt_transform: RigidTransform  # maps source points onto the reference
    viewpoint: Viewpoint | None
    seed: int

    def to_json_dict(self, source_file: str | None = None) -> dict:
        obj = {
            "reference_id": self.reference_id,
            "gt": self.gt_transform.to_json_dict(),
            "viewpoint": self.viewpoint.to_json_dict() if self.viewpoint else None,
            "seed": int(self.seed),
        }
        if source_file is not None:
            obj["source_file"] = source_file
        return obj


def sample_viewpoints(n: int, radius_range: tuple[float, float], center,
                      rng_seed: int = 0) -> list[Viewpoint]:
    """Viewpoints on the upper hemisphere shell around ``center``.

    Radii are uniform in ``radius_range``, azimuth uniform over the circle,
    elevation uniform in the 10-80 degree band. Same seed, same list.
    """
    if n < 1:
        raise InvalidRangeError("need at least one viewpoint")
    r_min, r_max = float(radius_range[0]), float(radius_range[1])
    if not (0 < r_min <= r_max):
        raise InvalidRangeError(f"bad radius range ({r_min}, {r_max})")
    center = np.asarray(center, dtype=float).reshape(3)
    rng = np.random.default_rng(rng_seed)
    lo, hi = (math.radians(d) for d in ELEVATION_BAND_DEG)
    out = []
    for _ in range(n):
        radius = rng.uniform(r_min, r_max)
        azimuth = rng.uniform(0.0, 2.0 * math.pi)
        elevation = rng.uniform(lo, hi)
        direction = np.array([
            math.cos(elevation) * math.cos(azimuth),
            math.cos(elevation) * math.sin(azimuth),
            math.sin(elevation),
        ])
        out.append(Viewpoint(center + radius * direction, center, np.array([0.0, 0.0, 1.0])))
    return out


def hidden_point_removal(model: PointCloud, vp: Viewpoint) -> PointCloud:
    """Subset of the model visible from the viewpoint position.

    Spherical flipping about the camera center: each point p at distance d
    moves outward to p + 2 (R_f - d) (p - c) / d with a flip radius R_f much
    larger than the scene; points whose images land on the convex hull of
    the flipped set (plus the camera point) are visible. Output points are
    the original coordinates, in ascending index order.
    """
    if len(model) < 10:
        raise TooFewPointsError("hidden_point_removal needs >= 10 model points")
    c = vp.position
    centroid = model.centroid()
    bound = float(np.max(np.linalg.norm(model.points - centroid, axis=1)))
    if np.linalg.norm(c - centroid) <= bound:
        raise ViewpointInsideModelError(
            "viewpoint lies inside the model's bounding sphere")
    rel = model.points - c
    dist = np.linalg.norm(rel, axis=1)
    flip_radius = HPR_FLIP_RADIUS_FACTOR * float(dist.max())
    flipped = model.points + 2.0 * ((flip_radius - dist) / dist)[:, None] * rel
    hull_input = np.vstack([flipped, c])
    try:
        hull = ConvexHull(hull_input)
    except QhullError:
        hull = ConvexHull(hull_input, qhull_options="QJ")
    visible = np.array(sorted(v for v in hull.vertices if v < len(model)))
    return PointCloud(model.points[visible], frame_label=model.frame_label)


def _random_rotation(rng: np.random.Generator, rot_max: float) -> np.ndarray:
    if rot_max == 0.0:
        return np.eye(3)
    axis = rng.normal(size=3)
    while np.linalg.norm(axis) < 1e-12:
        axis = rng.normal(size=3)
    angle = rng.uniform(0.0, rot_max)
    return rotation_about_axis(axis, angle)


def _random_translation(rng: np.random.Generator, trans_max: float) -> np.ndarray:
    if trans_max == 0.0:
        return np.zeros(3)
    direction = rng.normal(size=3)
    while np.linalg.norm(direction) < 1e-12:
        direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    return direction * trans_max * rng.uniform() ** (1.0 / 3.0)


def augment(partial: PointCloud, k: int, rot_max: float = math.pi,
            trans_max: float = 0.5, rng_seed: int = 0, *,
            viewpoint: Viewpoint | None = None,
            reference_id: str = "model") -> list[DatasetRecord]:
    """Scatter a partial view through ``k`` random rigid motions.

    Rotations use a sphere-uniform axis and an angle uniform in
    [0, rot_max]; translations are uniform in the ball of radius
    ``trans_max``. Each record stores the exact inverse motion, so
    ``transform(record.source, record.gt_transform)`` reproduces ``partial``
    bit-for-bit up to floating point.
    """
    if k < 1:
        raise InvalidRangeError("k must be >= 1")
    rng = np.random.default_rng(rng_seed)
    records = []
    for _ in range(k):
        motion = RigidTransform(_random_rotation(rng, rot_max),
                                _random_translation(rng, trans_max))
        records.append(DatasetRecord(
            source=transform(partial, motion),
            reference_id=reference_id,
            gt_transform=motion.inverse(),
            viewpoint=viewpoint,
            seed=int(rng_seed),
        ))
    return records


def generate_dataset(model_path, out_dir, n_viewpoints: int = 90,
                     k_augment: int = 10, rng_seed: int = 0,
                     radius_range: tuple[float, float] | None = None,
                     rot_max: float = math.pi, trans_max: float = 0.5,
                     noise_sigma: float = 0.0) -> list[dict]:
    """Write n_viewpoints x k_augment records and a manifest to ``out_dir``.

    Each record is a binary PLY plus a JSON ground-truth sidecar; the
    manifest aggregates all sidecars. Running twice with the same arguments
    produces byte-identical JSON.
    """
    model = load(model_path)
    reference_id = Path(model_path).stem
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    center = model.centroid()
    bound = float(np.max(np.linalg.norm(model.points - center, axis=1)))
    if radius_range is None:
        radius_range = (DEFAULT_RADIUS_FACTORS[0] * bound,
                        DEFAULT_RADIUS_FACTORS[1] * bound)
    if radius_range[0] <= bound:
        raise InvalidRangeError(
            f"viewpoint radius {radius_range[0]} must exceed the model"
            f" bounding radius {bound}")

    seeds = np.random.SeedSequence(rng_seed).generate_state(2 * n_viewpoints + 1)
    viewpoints = sample_viewpoints(n_viewpoints, radius_range, center,
                                   rng_seed=int(seeds[0]))
    manifest: list[dict] = []
    for i, vp in enumerate(viewpoints):
        partial = hidden_point_removal(model, vp)
        if noise_sigma > 0.0:
            jitter_rng = np.random.default_rng(int(seeds[1 + 2 * i]))
            partial = PointCloud(
                partial.points + jitter_rng.normal(scale=noise_sigma,
                                                   size=partial.points.shape))
        records = augment(partial, k_augment, rot_max, trans_max,
                          rng_seed=int(seeds[2 + 2 * i]),
                          viewpoint=vp, reference_id=reference_id)
        for j, rec in enumerate(records):
            stem = f"record_{i:04d}_{j:02d}"
            save(rec.source, out_dir / f"{stem}.ply", format="ply", binary=True)
            entry = rec.to_json_dict(source_file=f"{stem}.ply")
            (out_dir / f"{stem}.json").write_text(
                json.dumps(entry, sort_keys=True, indent=2) + "\n")
            manifest.append(entry)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def make_base_model(n_points: int = 2600, seed: int = 0) -> PointCloud:
    """Procedural stand-in for a robot-base scan target.

    A vertical cylinder (the base, origin at the bottom center) topped by a
    rectangular arm stub pointing along +X. The stub breaks the rotational
    symmetry of the cylinder so registration has a unique answer. Units are
    meters and proportions loosely follow a cobot base (~15 cm diameter).
    """
    rng = np.random.default_rng(seed)
    cyl_r, cyl_h = 0.074, 0.088
    box_min = np.array([-0.002, -0.043, cyl_h])
    box_max = np.array([0.158, 0.043, 0.167])

    side_area = 2 * math.pi * cyl_r * cyl_h
    top_area = math.pi * cyl_r**2
    ext = box_max - box_min
    box_areas = np.array([
        ext[1] * ext[2], ext[1] * ext[2],  # x faces
        ext[0] * ext[2], ext[0] * ext[2],  # y faces
        ext[0] * ext[1], ext[0] * ext[1],  # z faces
    ])
    total = side_area + top_area + box_areas.sum()

    def n_of(area):
        return max(8, int(round(n_points * area / total)))

    pts = []
    n_side = n_of(side_area)
    ang = rng.uniform(0, 2 * math.pi, n_side)
    z = rng.uniform(0, cyl_h, n_side)
    pts.append(np.column_stack([cyl_r * np.cos(ang), cyl_r * np.sin(ang), z]))

    n_top = n_of(top_area)
    rad = cyl_r * np.sqrt(rng.uniform(0, 1, n_top))
    ang = rng.uniform(0, 2 * math.pi, n_top)
    pts.append(np.column_stack([rad * np.cos(ang), rad * np.sin(ang),
                                np.full(n_top, cyl_h)]))

    for axis in range(3):
        for fixed in (box_min[axis], box_max[axis]):
            k = n_of(box_areas[2 * axis])
            face = rng.uniform(box_min, box_max, size=(k, 3))
            face[:, axis] = fixed
            pts.append(face)

    return PointCloud(np.vstack(pts), frame_label="synthetic-base")
