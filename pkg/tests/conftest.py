"""Shared synthetic-scene fixtures for the test suite."""

import json
import math

import numpy as np
import pytest

from basecal import (
    PointCloud,
    RigidTransform,
    hidden_point_removal,
    make_base_model,
    rot_z,
    sample_viewpoints,
    transform,
)

UR5E_DH = {
    "rows": [
        {"a": 0.0, "alpha": math.pi / 2, "d": 0.1625, "theta_offset": 0.0},
        {"a": -0.425, "alpha": 0.0, "d": 0.0, "theta_offset": 0.0},
        {"a": -0.3922, "alpha": 0.0, "d": 0.0, "theta_offset": 0.0},
        {"a": 0.0, "alpha": math.pi / 2, "d": 0.1333, "theta_offset": 0.0},
        {"a": 0.0, "alpha": -math.pi / 2, "d": 0.0997, "theta_offset": 0.0},
        {"a": 0.0, "alpha": 0.0, "d": 0.0996, "theta_offset": 0.0},
    ]
}


@pytest.fixture(scope="session")
def base_model():
    return make_base_model(2200, seed=3)


@pytest.fixture(scope="session")
def dense_model():
    return make_base_model(13000, seed=2)


def make_scene(model, vp_seed: int, theta1: float = 0.0,
               noise_sigma: float = 0.0, noise_seed: int = 0,
               radius=(0.45, 0.7)):
    """Partial scan of the base in a simulated camera frame.

    Returns (scan, viewpoint, cam_to_base). The model represents the base at
    first-joint angle zero; the scan shows it at ``theta1``. ``cam_to_base``
    maps base-frame coordinates into the camera frame, which is exactly what
    the pose-estimation chain must recover.
    """
    stance = transform(model, rot_z(theta1)) if theta1 else model
    vp = sample_viewpoints(1, radius, stance.centroid(), rng_seed=vp_seed)[0]
    visible = hidden_point_removal(stance, vp)
    cam_to_base = vp.camera_pose()
    scan = transform(visible, cam_to_base)
    if noise_sigma > 0:
        rng = np.random.default_rng(noise_seed)
        scan = PointCloud(scan.points + rng.normal(scale=noise_sigma,
                                                   size=scan.points.shape))
    return scan, vp, cam_to_base


def random_rigid(rng, rot_max=math.pi, trans_max=0.4) -> RigidTransform:
    from basecal import rotation_about_axis
    axis = rng.normal(size=3)
    angle = rng.uniform(0.0, rot_max)
    t = rng.uniform(-trans_max, trans_max, 3)
    return RigidTransform(rotation_about_axis(axis, angle), t)


def write_dh_json(path) -> str:
    path = str(path)
    with open(path, "w") as fh:
        json.dump(UR5E_DH, fh)
    return path
