import math

import numpy as np
import pytest

from basecal import (
    EulerAngles,
    RigidTransform,
    average_rotations,
    compose,
    from_euler,
    inverse,
    rot_x,
    rot_y,
    rot_z,
    rotation_about_axis,
    to_euler,
)
from basecal.errors import EmptyInputError
from basecal.geometry import (
    nearest_rotation,
    normalize_rows,
    quaternion_from_rotation,
    rotation_from_quaternion,
)

I3 = np.eye(3)


def explicit_rz(theta):
    # independent numeric construction for oracle purposes
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class TestRigidTransform:
    def test_identity(self):
        t = RigidTransform.identity()
        np.testing.assert_allclose(t.matrix, np.eye(4))

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3) * 1.01, np.zeros(3))

    def test_rejects_reflection(self):
        m = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            RigidTransform(m, np.zeros(3))

    def test_unchecked_bypasses_validation(self):
        t = RigidTransform.unchecked(np.eye(3) * 2.0, np.zeros(3))
        assert t.rotation[0, 0] == 2.0

    def test_immutable(self):
        t = rot_z(0.3)
        with pytest.raises(ValueError):
            t.rotation[0, 0] = 5.0

    def test_json_round_trip(self):
        t = RigidTransform(rotation_about_axis([1, 2, 3], 0.7), [0.1, -0.2, 0.3])
        back = RigidTransform.from_json(t.to_json())
        np.testing.assert_allclose(back.matrix, t.matrix, atol=1e-15)

    def test_apply_matches_matrix(self):
        rng = np.random.default_rng(0)
        t = RigidTransform(rotation_about_axis(rng.normal(size=3), 1.1),
                           rng.normal(size=3))
        pts = rng.normal(size=(5, 3))
        hom = np.column_stack([pts, np.ones(5)]) @ t.matrix.T
        np.testing.assert_allclose(t.apply(pts), hom[:, :3], atol=1e-12)


class TestCompose:
    def test_identity_pair(self):
        out = compose(RigidTransform.identity(), RigidTransform.identity())
        np.testing.assert_allclose(out.matrix, np.eye(4))

    def test_inverse_pair(self):
        rng = np.random.default_rng(1)
        t = RigidTransform(rotation_about_axis(rng.normal(size=3), 2.0),
                           rng.normal(size=3))
        out = compose(t, inverse(t))
        np.testing.assert_allclose(out.matrix, np.eye(4), atol=1e-9)

    def test_rz_addition(self):
        # oracle: explicit rotation matrices multiplied numerically
        expected = explicit_rz(math.radians(30)) @ explicit_rz(math.radians(60))
        np.testing.assert_allclose(expected, explicit_rz(math.radians(90)), atol=1e-12)
        out = compose(rot_z(math.radians(30)), rot_z(math.radians(60)))
        np.testing.assert_allclose(out.rotation, explicit_rz(math.radians(90)),
                                   atol=1e-12)

    def test_varargs(self):
        a, b, c = rot_z(0.2), rot_x(0.3), rot_y(-0.1)
        out = compose(a, b, c)
        np.testing.assert_allclose(out.matrix, (a @ b @ c).matrix, atol=1e-15)

    def test_preserves_orthonormality(self):
        rng = np.random.default_rng(2)
        t = RigidTransform.identity()
        for _ in range(60):
            t = compose(t, RigidTransform(
                rotation_about_axis(rng.normal(size=3), rng.uniform(0, 3)),
                rng.normal(size=3)))
        r = t.rotation
        assert np.linalg.norm(r.T @ r - I3) < 1e-9
        assert abs(np.linalg.det(r) - 1) < 1e-9


class TestInverse:
    def test_identity(self):
        np.testing.assert_allclose(inverse(RigidTransform.identity()).matrix,
                                   np.eye(4))

    def test_pure_translation(self):
        t = RigidTransform(I3, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(inverse(t).translation, [-1, -2, -3])

    def test_involution(self):
        rng = np.random.default_rng(3)
        t = RigidTransform(rotation_about_axis(rng.normal(size=3), 1.3),
                           rng.normal(size=3))
        np.testing.assert_allclose(inverse(inverse(t)).matrix, t.matrix,
                                   atol=1e-12)


class TestElementaryRotations:
    def test_rz_zero(self):
        np.testing.assert_allclose(rot_z(0.0).matrix, np.eye(4))

    def test_rz_half_turn(self):
        np.testing.assert_allclose(rot_z(math.pi).apply([1, 0, 0]),
                                   [-1, 0, 0], atol=1e-12)

    def test_rz_quarter_turn(self):
        np.testing.assert_allclose(rot_z(math.pi / 2).apply([1, 0, 0]),
                                   [0, 1, 0], atol=1e-12)

    def test_axis_angle_matches_elementary(self):
        for make, axis in ((rot_x, [1, 0, 0]), (rot_y, [0, 1, 0]), (rot_z, [0, 0, 1])):
            np.testing.assert_allclose(
                make(0.37).rotation, rotation_about_axis(axis, 0.37), atol=1e-12)


def euler_oracle(r):
    """Literal extraction formulas, independent of the implementation."""
    beta = math.atan2(-r[2, 0], math.sqrt(r[0, 0] ** 2 + r[1, 0] ** 2))
    cb = math.cos(beta)
    alpha = math.atan2(r[1, 0] / cb, r[0, 0] / cb)
    gamma = math.atan2(r[2, 1] / cb, r[2, 2] / cb)
    return beta, alpha, gamma


class TestEuler:
    def test_identity(self):
        e = to_euler(I3)
        assert (e.alpha, e.beta, e.gamma) == (0.0, 0.0, 0.0)
        assert not e.degenerate

    def test_rz90(self):
        r = explicit_rz(math.radians(90))
        beta, alpha, gamma = euler_oracle(r)
        e = to_euler(r)
        assert math.isclose(e.alpha, alpha) and math.isclose(alpha, math.radians(90))
        assert abs(e.beta - beta) < 1e-12 and abs(beta) < 1e-12
        assert abs(e.gamma - gamma) < 1e-12 and abs(gamma) < 1e-12

    def test_rx30(self):
        r = rot_x(math.radians(30)).rotation
        beta, alpha, gamma = euler_oracle(r)
        e = to_euler(r)
        assert math.isclose(e.gamma, gamma) and math.isclose(gamma, math.radians(30))
        assert abs(e.alpha - alpha) < 1e-12 and abs(e.beta - beta) < 1e-12

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            angles = EulerAngles(
                alpha=rng.uniform(-math.pi, math.pi),
                beta=rng.uniform(math.radians(-89), math.radians(89)),
                gamma=rng.uniform(-math.pi, math.pi),
            )
            e = to_euler(from_euler(angles))
            assert abs(e.alpha - angles.alpha) < 1e-9
            assert abs(e.beta - angles.beta) < 1e-9
            assert abs(e.gamma - angles.gamma) < 1e-9

    def test_gimbal_lock_flag(self):
        r = from_euler(EulerAngles(alpha=0.4, beta=math.pi / 2, gamma=0.0))
        e = to_euler(r)
        assert e.degenerate
        assert e.gamma == 0.0
        # reconstruction still reproduces the rotation
        np.testing.assert_allclose(from_euler(e), r, atol=1e-8)

    def test_r21_gamma_variant_differs(self):
        r = from_euler(EulerAngles(alpha=0.3, beta=0.2, gamma=0.5))
        assert to_euler(r).gamma != to_euler(r, r21_gamma=True).gamma

    def test_vector_order(self):
        e = EulerAngles(alpha=1.0, beta=2.0, gamma=3.0)
        np.testing.assert_array_equal(e.vector, [2.0, 1.0, 3.0])


def chordal_cost(theta, rotations):
    r = explicit_rz(theta)
    return sum(np.linalg.norm(r - ri) ** 2 for ri in rotations)


class TestAverageRotations:
    def test_repeated_input(self):
        r = rotation_about_axis([1, 1, 0], 0.8)
        np.testing.assert_allclose(average_rotations([r, r]), r, atol=1e-12)

    def test_symmetric_pair(self):
        d = math.radians(5)
        out = average_rotations([explicit_rz(d), explicit_rz(-d)])
        np.testing.assert_allclose(out, I3, atol=1e-9)

    def test_against_brute_force_1d(self):
        rotations = [explicit_rz(math.radians(10)), explicit_rz(math.radians(20))]
        # oracle: dense scan + golden-section refinement of the chordal cost
        grid = np.linspace(0, math.radians(30), 20001)
        costs = [chordal_cost(t, rotations) for t in grid]
        theta_star = grid[int(np.argmin(costs))]
        assert abs(theta_star - math.radians(15)) < 1e-4
        out = average_rotations(rotations)
        np.testing.assert_allclose(out, explicit_rz(math.radians(15)), atol=1e-6)

    def test_weight_scaling_invariance(self):
        rng = np.random.default_rng(5)
        rs = [rotation_about_axis(rng.normal(size=3), rng.uniform(0, 1))
              for _ in range(4)]
        w = rng.uniform(0.1, 2.0, 4)
        a = average_rotations(rs, w)
        b = average_rotations(rs, 7.3 * w)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        rs = [rotation_about_axis(rng.normal(size=3), rng.uniform(0, 1))
              for _ in range(5)]
        a = average_rotations(rs)
        b = average_rotations(rs[::-1])
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_weighted_pull(self):
        rs = [explicit_rz(0.0), explicit_rz(math.radians(10))]
        out = average_rotations(rs, [3.0, 1.0])
        pulled = to_euler(out).alpha
        assert 0 < pulled < math.radians(5)

    def test_result_orthonormal_near_antipodal(self):
        out = average_rotations([explicit_rz(math.radians(179)),
                                 explicit_rz(math.radians(-179))])
        assert np.linalg.norm(out.T @ out - I3) < 1e-9

    def test_empty_raises(self):
        with pytest.raises(EmptyInputError):
            average_rotations([])


class TestQuaternions:
    def test_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            r = rotation_about_axis(rng.normal(size=3), rng.uniform(0, math.pi))
            q = quaternion_from_rotation(r)
            np.testing.assert_allclose(rotation_from_quaternion(q), r, atol=1e-12)

    def test_double_cover(self):
        r = rotation_about_axis([0.2, -1.0, 0.4], 2.9)
        q = quaternion_from_rotation(r)
        np.testing.assert_allclose(rotation_from_quaternion(-q), r, atol=1e-12)


class TestOrthonormalization:
    def test_nearest_rotation_fixes_noise(self):
        rng = np.random.default_rng(8)
        r = rotation_about_axis(rng.normal(size=3), 1.0)
        noisy = r + rng.normal(scale=0.02, size=(3, 3))
        fixed = nearest_rotation(noisy)
        assert np.linalg.norm(fixed.T @ fixed - I3) < 1e-12
        assert abs(np.linalg.det(fixed) - 1) < 1e-12

    def test_nearest_rotation_identity_on_exact(self):
        r = rotation_about_axis([1, 0, 2], 0.9)
        np.testing.assert_allclose(nearest_rotation(r), r, atol=1e-12)

    def test_row_normalization_is_not_orthonormal(self):
        m = np.array([[1.0, 0.2, 0.0], [0.0, 1.0, 0.1], [0.0, 0.0, 1.0]])
        rows = normalize_rows(m)
        np.testing.assert_allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-12)
        assert np.linalg.norm(rows.T @ rows - I3) > 1e-3
