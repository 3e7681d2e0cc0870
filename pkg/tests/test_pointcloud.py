import math

import numpy as np
import pytest

from basecal import (
    Aabb,
    PointCloud,
    SpatialIndex,
    average_spacing,
    crop,
    load,
    rot_z,
    save,
    transform,
)
from basecal.errors import (
    EmptyCloudError,
    NonPositiveVoxelError,
    ParseError,
    TooFewPointsError,
    UnsupportedFormatError,
)
from basecal.pointcloud import voxel_downsample
from conftest import random_rigid


class TestXyzIo:
    def test_three_lines(self, tmp_path):
        p = tmp_path / "a.xyz"
        p.write_text("0 0 0\n1 0 0\n0 1 0\n")
        pc = load(p)
        assert len(pc) == 3
        np.testing.assert_array_equal(pc.points[1], [1, 0, 0])

    def test_comments_and_blanks(self, tmp_path):
        p = tmp_path / "a.xyz"
        p.write_text("# header\n\n1 2 3   # trailing\n")
        assert len(load(p)) == 1

    def test_mm_units_comment(self, tmp_path):
        p = tmp_path / "a.xyz"
        p.write_text("# units: mm\n1000 0 0\n")
        np.testing.assert_allclose(load(p).points[0], [1.0, 0.0, 0.0])

    def test_parse_error_carries_line(self, tmp_path):
        p = tmp_path / "a.xyz"
        p.write_text("0 0 0\n1 nope 0\n")
        with pytest.raises(ParseError) as err:
            load(p)
        assert err.value.line == 2

    def test_too_few_columns(self, tmp_path):
        p = tmp_path / "a.xyz"
        p.write_text("1 2\n")
        with pytest.raises(ParseError):
            load(p)

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        pc = PointCloud(rng.uniform(-1, 1, (50, 3)))
        save(pc, tmp_path / "out.xyz")
        back = load(tmp_path / "out.xyz")
        np.testing.assert_allclose(back.points, pc.points, atol=1e-6)

    def test_unknown_extension(self, tmp_path):
        p = tmp_path / "a.bin"
        p.write_text("0 0 0\n")
        with pytest.raises(UnsupportedFormatError):
            load(p)


PLY_ASCII_EMPTY = """ply
format ascii 1.0
element vertex 0
property float x
property float y
property float z
end_header
"""

PLY_ASCII_EXTRA = """ply
format ascii 1.0
comment made for tests
element vertex 2
property float x
property float y
property float z
property uchar intensity
end_header
0.5 0 0 17
0 0.25 0 9
"""


class TestPlyIo:
    def test_empty_vertex_list(self, tmp_path):
        p = tmp_path / "e.ply"
        p.write_text(PLY_ASCII_EMPTY)
        assert len(load(p)) == 0

    def test_extra_properties_skipped(self, tmp_path):
        p = tmp_path / "x.ply"
        p.write_text(PLY_ASCII_EXTRA)
        pc = load(p)
        np.testing.assert_allclose(pc.points, [[0.5, 0, 0], [0, 0.25, 0]])

    def test_mm_comment(self, tmp_path):
        p = tmp_path / "mm.ply"
        p.write_text(PLY_ASCII_EXTRA.replace("made for tests", "units mm"))
        np.testing.assert_allclose(load(p).points[0], [0.0005, 0, 0])

    def test_binary_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        pc = PointCloud(rng.uniform(-2, 2, (200, 3)))
        save(pc, tmp_path / "b.ply", format="ply", binary=True)
        back = load(tmp_path / "b.ply")
        np.testing.assert_array_equal(back.points, pc.points)

    def test_ascii_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        pc = PointCloud(rng.uniform(-2, 2, (40, 3)))
        save(pc, tmp_path / "a.ply", format="ply", binary=False)
        np.testing.assert_allclose(load(tmp_path / "a.ply").points, pc.points,
                                   atol=1e-9)

    def test_float32_vertices(self, tmp_path):
        header = ("ply\nformat binary_little_endian 1.0\n"
                  "element vertex 2\n"
                  "property float x\nproperty float y\nproperty float z\n"
                  "end_header\n")
        body = np.array([[1, 2, 3], [4, 5, 6]], dtype="<f4").tobytes()
        p = tmp_path / "f32.ply"
        p.write_bytes(header.encode() + body)
        np.testing.assert_allclose(load(p).points, [[1, 2, 3], [4, 5, 6]])

    def test_big_endian_rejected(self, tmp_path):
        p = tmp_path / "be.ply"
        p.write_text(PLY_ASCII_EMPTY.replace("ascii", "binary_big_endian"))
        with pytest.raises(UnsupportedFormatError):
            load(p)

    def test_truncated_binary(self, tmp_path):
        header = ("ply\nformat binary_little_endian 1.0\n"
                  "element vertex 5\n"
                  "property double x\nproperty double y\nproperty double z\n"
                  "end_header\n")
        p = tmp_path / "t.ply"
        p.write_bytes(header.encode() + b"\x00" * 16)
        with pytest.raises(ParseError):
            load(p)

    def test_list_property_before_vertex_binary(self, tmp_path):
        header = ("ply\nformat binary_little_endian 1.0\n"
                  "element face 1\nproperty list uchar int vertex_indices\n"
                  "element vertex 1\n"
                  "property float x\nproperty float y\nproperty float z\n"
                  "end_header\n")
        p = tmp_path / "l.ply"
        p.write_bytes(header.encode() + b"\x00" * 32)
        with pytest.raises(UnsupportedFormatError):
            load(p)


class TestVoxelDownsample:
    def test_duplicates_collapse(self):
        pc = PointCloud([[0.1, 0.1, 0.1], [0.1, 0.1, 0.1]])
        assert len(voxel_downsample(pc, 0.05)) == 1

    def test_distinct_voxels_survive(self):
        pc = PointCloud([[0, 0, 0], [1, 1, 1]])
        assert len(voxel_downsample(pc, 0.1)) == 2

    def test_grid_occupancy_exact(self):
        # 100^3 grid at 1 mm pitch, 2 mm voxel: oracle enumerates voxels
        axis = np.arange(100) * 0.001
        pts = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"),
                       axis=-1).reshape(-1, 3)
        pc = PointCloud(pts)
        out = voxel_downsample(pc, 0.002)
        occupied = np.unique(np.floor(pts / 0.002).astype(np.int64), axis=0)
        assert len(out) == occupied.shape[0]
        assert abs(len(out) / len(pc) - 0.125) < 0.01

    def test_centroid_value(self):
        pc = PointCloud([[0.001, 0, 0], [0.003, 0, 0]])
        out = voxel_downsample(pc, 0.01)
        np.testing.assert_allclose(out.points[0], [0.002, 0, 0])

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        pc = PointCloud(rng.uniform(-0.5, 0.5, (3000, 3)))
        once = voxel_downsample(pc, 0.07)
        twice = voxel_downsample(once, 0.07)
        np.testing.assert_array_equal(once.points, twice.points)

    def test_rejects_non_positive(self):
        with pytest.raises(NonPositiveVoxelError):
            voxel_downsample(PointCloud([[0, 0, 0]]), 0.0)

    def test_empty_passthrough(self):
        assert len(voxel_downsample(PointCloud(np.empty((0, 3))), 0.1)) == 0


class TestAverageSpacing:
    def test_chain(self):
        pts = np.zeros((10, 3))
        pts[:, 0] = np.arange(10) * 0.002
        assert math.isclose(average_spacing(PointCloud(pts)), 0.002)

    def test_two_points(self):
        pc = PointCloud([[0, 0, 0], [0.005, 0, 0]])
        assert math.isclose(average_spacing(pc), 0.005)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(4)
        base = np.stack(np.meshgrid(*[np.arange(6) * 0.01] * 3,
                                    indexing="ij"), axis=-1).reshape(-1, 3)
        pts = base + rng.normal(scale=0.001, size=base.shape)
        pc = PointCloud(pts)
        diff = pts[:, None, :] - pts[None, :, :]
        d2 = (diff ** 2).sum(-1)
        np.fill_diagonal(d2, np.inf)
        expected = np.sqrt(d2.min(axis=1)).mean()
        assert abs(average_spacing(pc) - expected) < 1e-12

    def test_too_few(self):
        with pytest.raises(TooFewPointsError):
            average_spacing(PointCloud([[0, 0, 0]]))


class TestSpatialIndex:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(-1, 1, (500, 3))
        idx = SpatialIndex(PointCloud(pts))
        queries = rng.uniform(-1, 1, (200, 3))
        for q in queries:
            i, d = idx.nearest(q)
            dists = np.linalg.norm(pts - q, axis=1)
            assert math.isclose(d, dists.min(), rel_tol=1e-12, abs_tol=1e-15)
            assert dists[i] == dists.min()

    def test_duplicate_tie_breaks_to_lowest_index(self):
        pts = np.array([[1.0, 0, 0], [0.5, 0, 0], [0.5, 0, 0], [0.5, 0, 0]])
        idx = SpatialIndex(PointCloud(pts))
        i, d = idx.nearest([0.5, 0, 0])
        assert i == 1 and d == 0.0

    def test_batched_query(self):
        rng = np.random.default_rng(6)
        pts = rng.uniform(-1, 1, (300, 3))
        idx = SpatialIndex(PointCloud(pts))
        q = rng.uniform(-1, 1, (50, 3))
        d, i = idx.query(q)
        brute = np.linalg.norm(pts[None] - q[:, None], axis=2).min(axis=1)
        np.testing.assert_allclose(d, brute, atol=1e-12)

    def test_empty_raises(self):
        with pytest.raises(EmptyCloudError):
            SpatialIndex(PointCloud(np.empty((0, 3))))


class TestTransform:
    def test_identity(self):
        pc = PointCloud([[1, 2, 3]])
        out = transform(pc, rot_z(0.0))
        np.testing.assert_array_equal(out.points, pc.points)

    def test_round_trip(self):
        rng = np.random.default_rng(7)
        pc = PointCloud(rng.uniform(-1, 1, (100, 3)))
        t = random_rigid(rng)
        back = transform(transform(pc, t), t.inverse())
        np.testing.assert_allclose(back.points, pc.points, atol=1e-9)

    def test_quarter_turn(self):
        out = transform(PointCloud([[1, 0, 0]]), rot_z(math.pi / 2))
        np.testing.assert_allclose(out.points[0], [0, 1, 0], atol=1e-12)

    def test_rigidity(self):
        rng = np.random.default_rng(8)
        pc = PointCloud(rng.uniform(-1, 1, (60, 3)))
        t = random_rigid(rng)
        moved = transform(pc, t)
        d_before = np.linalg.norm(pc.points[:, None] - pc.points[None], axis=2)
        d_after = np.linalg.norm(moved.points[:, None] - moved.points[None], axis=2)
        np.testing.assert_allclose(d_after, d_before, atol=1e-9)


class TestCrop:
    def test_containing_box_is_identity(self):
        rng = np.random.default_rng(9)
        pc = PointCloud(rng.uniform(-1, 1, (80, 3)))
        out = crop(pc, Aabb([-2, -2, -2], [2, 2, 2]))
        np.testing.assert_array_equal(out.points, pc.points)

    def test_disjoint_box_empty(self):
        pc = PointCloud([[0, 0, 0]])
        assert len(crop(pc, Aabb([5, 5, 5], [6, 6, 6]))) == 0

    def test_half_space_oracle(self):
        rng = np.random.default_rng(10)
        pts = rng.uniform(0, 1, (400, 3))
        pc = PointCloud(pts)
        box = Aabb([-1, -1, -1], [0.5, 2, 2])
        out = crop(pc, box)
        expected = pts[pts[:, 0] <= 0.5]
        np.testing.assert_array_equal(out.points, expected)

    def test_count_conservation(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(-1, 1, (500, 3))
        pc = PointCloud(pts)
        for _ in range(20):
            lo = rng.uniform(-1, 0, 3)
            hi = lo + rng.uniform(0, 2, 3)
            box = Aabb(lo, hi)
            inside = len(crop(pc, box))
            outside = int((~box.contains(pts)).sum())
            assert inside + outside == len(pc)

    def test_closed_boundaries(self):
        pc = PointCloud([[0.5, 0.5, 0.5]])
        assert len(crop(pc, Aabb([0.5, 0.5, 0.5], [1, 1, 1]))) == 1


class TestAabb:
    def test_rejects_inverted(self):
        with pytest.raises(ValueError):
            Aabb([1, 0, 0], [0, 1, 1])

    def test_volume(self):
        assert math.isclose(Aabb([0, 0, 0], [2, 3, 4]).volume, 24.0)

    def test_json_round_trip(self):
        box = Aabb([-1, 0, 2], [0, 1, 5])
        back = Aabb.from_json_dict(box.to_json_dict())
        np.testing.assert_array_equal(back.min, box.min)
        np.testing.assert_array_equal(back.max, box.max)
