"""Point-cloud container, file I/O, downsampling and spatial queries.

Internal unit is meters everywhere. Files declaring millimeter units (via a
``units`` comment, see :func:`load`) are converted on read. Clouds are
immutable; operations return new clouds and never reorder points unless
documented.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    EmptyCloudError,
    NonPositiveVoxelError,
    ParseError,
    TooFewPointsError,
    UnsupportedFormatError,
)
from .geometry import RigidTransform

__all__ = [
    "PointCloud",
    "SpatialIndex",
    "Aabb",
    "load",
    "save",
    "voxel_downsample",
    "average_spacing",
    "transform",
    "crop",
]


@dataclass(frozen=True)
class PointCloud:
    """Ordered list of 3D points in meters."""

    points: np.ndarray
    frame_label: str | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.size == 0:
            p = p.reshape(0, 3)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("points contain non-finite coordinates")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        if len(self) == 0:
            raise EmptyCloudError("centroid of an empty cloud")
        return self.points.mean(axis=0)

    def bounds(self) -> "Aabb":
        if len(self) == 0:
            raise EmptyCloudError("bounds of an empty cloud")
        return Aabb(self.points.min(axis=0), self.points.max(axis=0))


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box, closed on all faces. min <= max componentwise."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float).reshape(3)
        hi = np.asarray(self.max, dtype=float).reshape(3)
        if np.any(lo > hi):
            raise ValueError(f"box min {lo} exceeds max {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.max - self.min))

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        return np.all((p >= self.min) & (p <= self.max), axis=1)

    def to_json_dict(self) -> dict:
        return {"min": list(self.min.tolist()), "max": list(self.max.tolist())}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Aabb":
        return cls(np.asarray(obj["min"], dtype=float), np.asarray(obj["max"], dtype=float))


class SpatialIndex:
    """Immutable exact nearest-neighbor index over one cloud.

    Ties in distance break toward the lowest point index, so queries are
    fully deterministic even on clouds with duplicate points.
    """

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise EmptyCloudError("cannot index an empty cloud")
        self._points = cloud.points
        self._tree = cKDTree(cloud.points)

    def __len__(self) -> int:
        return self._points.shape[0]

    def nearest(self, query) -> tuple[int, float]:
        """Exact 1-NN of a single point: (index, distance)."""
        q = np.asarray(query, dtype=float).reshape(3)
        d, i = self._tree.query(q)
        # resolve ties deterministically: lowest index among equidistant hits
        cand = self._tree.query_ball_point(q, d * (1.0 + 1e-12) + 1e-300)
        if len(cand) > 1:
            cand = np.sort(np.asarray(cand))
            dists = np.linalg.norm(self._points[cand] - q, axis=1)
            order = np.lexsort((cand, dists))
            return int(cand[order[0]]), float(dists[order[0]])
        return int(i), float(d)

    def query(self, points, workers: int = -1) -> tuple[np.ndarray, np.ndarray]:
        """Batched 1-NN: (distances, indices). No tie-break guarantee."""
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        d, i = self._tree.query(p, workers=workers)
        return d, i


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

_UNIT_RE = re.compile(r"units?\s*[:=]?\s*(mm|millimeters?|m|meters?)\b", re.IGNORECASE)

_PLY_SCALAR = {
    "char": ("b", 1), "int8": ("b", 1),
    "uchar": ("B", 1), "uint8": ("B", 1),
    "short": ("h", 2), "int16": ("h", 2),
    "ushort": ("H", 2), "uint16": ("H", 2),
    "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
    "float": ("f", 4), "float32": ("f", 4),
    "double": ("d", 8), "float64": ("d", 8),
}


def _unit_scale_from_comment(comment: str) -> float | None:
    m = _UNIT_RE.search(comment)
    if not m:
        return None
    return 1e-3 if m.group(1).lower().startswith("mm") or "milli" in m.group(1).lower() else 1.0


def load(path, format: str | None = None) -> PointCloud:
    """Read a point cloud from an XYZ-ascii or PLY file.

    ``format`` may be "xyz", "ply", or None to pick from the file extension
    (PLY flavor, ascii vs binary-little-endian, is read from the header). A
    comment line such as ``units: mm`` switches interpretation to
    millimeters; coordinates are always returned in meters.
    """
    path = Path(path)
    if format is None:
        ext = path.suffix.lower()
        if ext == ".ply":
            format = "ply"
        elif ext in (".xyz", ".txt", ".asc"):
            format = "xyz"
        else:
            raise UnsupportedFormatError(f"cannot infer format from '{path.name}'")
    fmt = format.lower().replace("-ascii", "").replace("-binary-le", "")
    if fmt == "xyz":
        return _load_xyz(path)
    if fmt == "ply":
        return _load_ply(path)
    raise UnsupportedFormatError(f"unknown format '{format}'")


def _load_xyz(path: Path) -> PointCloud:
    pts = []
    scale = 1.0
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)
            if len(line) == 2:
                s = _unit_scale_from_comment(line[1])
                if s is not None:
                    scale = s
            body = line[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) < 3:
                raise ParseError(path, f"expected 3 coordinates, got {len(parts)}", line=lineno)
            try:
                pts.append([float(parts[0]), float(parts[1]), float(parts[2])])
            except ValueError as exc:
                raise ParseError(path, str(exc), line=lineno) from None
    arr = np.asarray(pts, dtype=float).reshape(-1, 3) * scale
    return PointCloud(arr, frame_label=path.stem)


def _load_ply(path: Path) -> PointCloud:
    data = path.read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError(path, "not a PLY file (missing header)")
    body_start = data.find(b"\n", end) + 1
    header_lines = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    scale = 1.0
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    for line in header_lines[1:]:
        tok = line.strip().split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "comment":
            s = _unit_scale_from_comment(" ".join(tok[1:]))
            if s is not None:
                scale = s
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError(path, "property before any element in header")
            if tok[1] == "list":
                elements[-1][2].append(("list", tok[-1]))
            else:
                elements[-1][2].append((tok[1], tok[2]))
    if fmt is None:
        raise ParseError(path, "header missing format line")
    if fmt == "binary_big_endian":
        raise UnsupportedFormatError("big-endian PLY is not supported")
    if fmt not in ("ascii", "binary_little_endian"):
        raise UnsupportedFormatError(f"unknown PLY format '{fmt}'")

    names = [name for name, _, _ in elements]
    if "vertex" not in names:
        raise ParseError(path, "no vertex element in header")
    vtx_pos = names.index("vertex")
    _, n_vertices, vtx_props = elements[vtx_pos]
    prop_names = [p[1] for p in vtx_props]
    for axis in ("x", "y", "z"):
        if axis not in prop_names:
            raise ParseError(path, f"vertex element lacks '{axis}' property")
        ptype = vtx_props[prop_names.index(axis)][0]
        if ptype not in ("float", "float32", "double", "float64"):
            raise UnsupportedFormatError(f"vertex {axis} has type '{ptype}'")
    xyz_cols = [prop_names.index(a) for a in ("x", "y", "z")]

    if fmt == "ascii":
        lines = data[body_start:].decode("ascii", errors="replace").splitlines()
        cursor = 0
        pts = None
        for name, count, props in elements:
            if name == "vertex":
                rows = lines[cursor:cursor + count]
                if len(rows) < count:
                    raise ParseError(path, f"expected {count} vertex rows, found {len(rows)}")
                pts = np.empty((count, 3))
                for k, row in enumerate(rows):
                    parts = row.split()
                    if len(parts) < len(props):
                        raise ParseError(path, "short vertex row",
                                         line=len(header_lines) + 1 + cursor + k)
                    try:
                        pts[k] = [float(parts[c]) for c in xyz_cols]
                    except ValueError as exc:
                        raise ParseError(path, str(exc),
                                         line=len(header_lines) + 1 + cursor + k) from None
                break  # elements after vertex are irrelevant
            cursor += count
        assert pts is not None
        return PointCloud(pts * scale, frame_label=path.stem)

    # binary little-endian: every element up to and including vertex must be
    # fixed-size (list properties prevent seeking past them)
    offset = body_start
    for name, count, props in elements:
        if any(p[0] == "list" for p in props):
            raise UnsupportedFormatError(
                f"list property in element '{name}' before vertex data")
        fmt_chars = []
        for ptype, _ in props:
            if ptype not in _PLY_SCALAR:
                raise UnsupportedFormatError(f"property type '{ptype}'")
            fmt_chars.append(_PLY_SCALAR[ptype][0])
        rec = struct.Struct("<" + "".join(fmt_chars))
        if name == "vertex":
            need = rec.size * count
            if len(data) - offset < need:
                raise ParseError(path, "truncated vertex data", offset=offset)
            pts = np.empty((count, 3))
            for k, rec_vals in enumerate(rec.iter_unpack(data[offset:offset + need])):
                pts[k] = [rec_vals[c] for c in xyz_cols]
            return PointCloud(pts * scale, frame_label=path.stem)
        offset += rec.size * count
    raise ParseError(path, "vertex element not reached")  # pragma: no cover


def save(cloud: PointCloud, path, format: str | None = None, binary: bool = True) -> None:
    """Write a cloud as XYZ-ascii or PLY (binary little-endian by default)."""
    path = Path(path)
    if format is None:
        ext = path.suffix.lower()
        format = "ply" if ext == ".ply" else "xyz"
    fmt = format.lower()
    if fmt == "xyz":
        with open(path, "w") as fh:
            for p in cloud.points:
                fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        return
    if fmt != "ply":
        raise UnsupportedFormatError(f"unknown format '{format}'")
    n = len(cloud)
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"element vertex {n}\n"
        "property double x\n"
        "property double y\n"
        "property double z\n"
        "end_header\n"
    )
    if binary:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(np.ascontiguousarray(cloud.points, dtype="<f8").tobytes())
    else:
        with open(path, "w") as fh:
            fh.write(header)
            for p in cloud.points:
                fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")


# ---------------------------------------------------------------------------
# geometric operations
# ---------------------------------------------------------------------------

def voxel_downsample(pc: PointCloud, voxel: float) -> PointCloud:
    """Collapse each occupied voxel to the centroid of its points.

    Output order is the first-occurrence order of each voxel, which makes
    the operation a deterministic, idempotent function of the input.
    """
    if voxel <= 0:
        raise NonPositiveVoxelError(f"voxel size must be > 0, got {voxel}")
    if len(pc) == 0:
        return pc
    keys = np.floor(pc.points / voxel).astype(np.int64)
    _, first_idx, inverse_idx = np.unique(
        keys, axis=0, return_index=True, return_inverse=True)
    n_vox = first_idx.shape[0]
    sums = np.zeros((n_vox, 3))
    np.add.at(sums, inverse_idx, pc.points)
    counts = np.bincount(inverse_idx, minlength=n_vox).astype(float)
    centroids = sums / counts[:, None]
    order = np.argsort(first_idx, kind="stable")
    return PointCloud(centroids[order], frame_label=pc.frame_label)


def average_spacing(pc: PointCloud) -> float:
    """Mean distance from each point to its nearest other point."""
    if len(pc) < 2:
        raise TooFewPointsError("average_spacing needs at least 2 points")
    tree = cKDTree(pc.points)
    workers = -1 if len(pc) >= 4000 else 1
    d, _ = tree.query(pc.points, k=2, workers=workers)
    return float(d[:, 1].mean())


def transform(pc: PointCloud, t: RigidTransform) -> PointCloud:
    """Map every point p -> R p + t; count and order preserved."""
    return PointCloud(t.apply(pc.points), frame_label=pc.frame_label)


def crop(pc: PointCloud, box: Aabb) -> PointCloud:
    """Points inside the closed box, in their original order."""
    if len(pc) == 0:
        return pc
    return PointCloud(pc.points[box.contains(pc.points)], frame_label=pc.frame_label)
