"""Hand-eye calibration from point clouds of the robot base.

The toolkit estimates the rigid transform between a 3D camera and a robot
(eye-in-hand or eye-to-hand) from a single scan of the robot base, and
ships the synthetic-data, registration, metric and reconstruction-
evaluation machinery to validate the whole chain without hardware.
"""

from .basepose import (
    BasePoseEstimate,
    ReferenceModel,
    assemble_cam_to_base,
    estimate_cam_to_ref,
    extract_roi,
    filtered_base_pose,
)
from .evalharness import (
    PlaneFit,
    SphereFit,
    TestReport,
    dynamic_test,
    fit_plane,
    fit_sphere,
    offset_report,
    static_test,
)
from .geometry import (
    EulerAngles,
    RigidTransform,
    UnitQuaternion,
    average_rotations,
    compose,
    from_euler,
    inverse,
    nearest_rotation,
    rot_x,
    rot_y,
    rot_z,
    rotation_about_axis,
    to_euler,
)
from .handeye import (
    CalibrationResult,
    DhRow,
    DhTable,
    JointConfig,
    MotionPair,
    forward_kinematics,
    solve_ax_xb,
    solve_eye_to_hand,
    solve_single_shot_eye_in_hand,
)
from .metrics import (
    SurfaceRms,
    TransformError,
    iou3d,
    re,
    rmse_transform,
    rre,
    rms_to_surface,
    rte,
)
from .pointcloud import (
    Aabb,
    PointCloud,
    SpatialIndex,
    average_spacing,
    crop,
    load,
    save,
    transform,
    voxel_downsample,
)
from .registration import (
    MatchParams,
    RegistrationResult,
    coarse_align,
    icp,
    overlap_ratio,
    procrustes_fit,
    register,
)
from .synthdata import (
    DatasetRecord,
    Viewpoint,
    augment,
    generate_dataset,
    hidden_point_removal,
    make_base_model,
    sample_viewpoints,
)

__version__ = "0.1.0"
