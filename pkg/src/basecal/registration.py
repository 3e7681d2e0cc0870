"""Rigid registration of a partial robot-base scan onto a reference model.

The pipeline is classical multi-start ICP:

1. coarse candidates: centroid shift, principal-axes alignment with the four
   proper sign disambiguations, a yaw sweep about the reference vertical,
   and a pre-scored grid of tilt hypotheses (partial views can sit at any
   orientation, and plain yaw/PCA seeds do not cover that);
2. per candidate, a short pull-in phase (untrimmed-gate-free trimmed ICP,
   then an annealed distance gate) on coarsely voxel-filtered clouds;
3. winner selection by overlap ratio with an RMSE tie-break inside a small
   overlap band; on a partial scan every surface-hugging pose matches all
   of its points, so overlap alone cannot separate "slid" poses from the
   true one, while their residuals differ by an order of magnitude;
4. full-resolution gated ICP from the winner.

Frames: the returned transform maps *source* points into the *reference*
frame, ``q ~= R p + t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateCorrespondencesError,
    DegenerateCovarianceError,
    EmptyCloudError,
    TooFewPointsError,
)
from .geometry import RigidTransform, _rz, rotation_about_axis, rotation_angle_deg
from .pointcloud import PointCloud, average_spacing, voxel_downsample

__all__ = [
    "MatchParams",
    "RegistrationResult",
    "procrustes_fit",
    "icp",
    "coarse_align",
    "register",
    "overlap_ratio",
]


@dataclass(frozen=True)
class MatchParams:
    """Tunables shared by matching, ICP and overlap scoring.

    ``tau_factor`` scales the mean point spacing of the voxel-filtered
    reference into the correspondence gate tau. ``trim_fraction`` drops that
    fraction of the worst gated residuals each iteration.
    """

    tau_factor: float = 1.5
    voxel: float = 0.015
    max_icp_iters: int = 60
    convergence_eps: float = 1e-6
    trim_fraction: float = 0.1

    def __post_init__(self):
        if self.tau_factor <= 0:
            raise ValueError(f"tau_factor must be > 0, got {self.tau_factor}")
        if self.voxel <= 0:
            raise ValueError(f"voxel must be > 0, got {self.voxel}")
        if self.max_icp_iters < 1:
            raise ValueError("max_icp_iters must be >= 1")
        if not 0 <= self.trim_fraction < 1:
            raise ValueError("trim_fraction must be in [0, 1)")


@dataclass(frozen=True)
class RegistrationResult:
    """Outcome of one alignment attempt (source -> reference)."""

    transform: RigidTransform
    overlap_ratio: float
    inlier_rmse: float
    iterations: int
    converged: bool
    ambiguous: bool = False
    objective_history: tuple[float, ...] = field(default=(), repr=False)

    def to_json_dict(self) -> dict:
        return {
            "transform": self.transform.to_json_dict(),
            "overlap_ratio": self.overlap_ratio,
            "inlier_rmse": self.inlier_rmse,
            "iterations": self.iterations,
            "converged": self.converged,
            "ambiguous": self.ambiguous,
        }


# ---------------------------------------------------------------------------
# closed-form rigid fit
# ---------------------------------------------------------------------------

def _procrustes_arrays(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cp = p.mean(axis=0)
    cq = q.mean(axis=0)
    h = (p - cp).T @ (q - cq)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, cq - r @ cp


def procrustes_fit(source_pts, target_pts) -> RigidTransform:
    """Closed-form SVD rigid fit mapping paired source points onto targets."""
    p = np.asarray(source_pts, dtype=float).reshape(-1, 3)
    q = np.asarray(target_pts, dtype=float).reshape(-1, 3)
    if p.shape != q.shape or p.shape[0] < 3:
        raise DegenerateCorrespondencesError(
            f"need >= 3 paired points, got {p.shape[0]} vs {q.shape[0]}")
    r, t = _procrustes_arrays(p, q)
    return RigidTransform(r, t)


# ---------------------------------------------------------------------------
# ICP core
# ---------------------------------------------------------------------------

def _workers_for(n: int) -> int:
    # thread fan-out only pays off on large query batches
    return -1 if n >= 2500 else 1


def _tau_for(reference: PointCloud, params: MatchParams,
             ref_filtered: PointCloud | None = None) -> float:
    ref_f = ref_filtered if ref_filtered is not None else voxel_downsample(reference, params.voxel)
    spacing_cloud = ref_f if len(ref_f) >= 2 else reference
    return params.tau_factor * average_spacing(spacing_cloud)


def _motion(r_new, t_new, r_old, t_old, radius: float) -> float:
    dt = float(np.linalg.norm(t_new - t_old))
    dr = math.radians(rotation_angle_deg(r_old, r_new))
    return dt + dr * radius


def _icp_core(src_pts: np.ndarray, ref_pts: np.ndarray, ref_tree: cKDTree,
              tau: float, init: RigidTransform, params: MatchParams,
              max_iters: int | None = None, eps: float | None = None):
    """Gated, trimmed point-to-point ICP on raw arrays."""
    r = init.rotation
    t = init.translation
    centroid = src_pts.mean(axis=0)
    radius = float(np.max(np.linalg.norm(src_pts - centroid, axis=1)))
    iters = max_iters if max_iters is not None else params.max_icp_iters
    eps = params.convergence_eps if eps is None else eps
    workers = _workers_for(src_pts.shape[0])
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, iters + 1):
        moved = src_pts @ r.T + t
        d, idx = ref_tree.query(moved, workers=workers)
        mask = d < tau
        n_gated = int(mask.sum())
        if n_gated >= 3 and params.trim_fraction > 0:
            n_keep = max(3, int(math.ceil(n_gated * (1.0 - params.trim_fraction))))
            if n_keep < n_gated:
                gated_d = d[mask]
                cutoff = np.partition(gated_d, n_keep - 1)[n_keep - 1]
                mask &= d <= cutoff
        if int(mask.sum()) < 3:
            raise DegenerateCorrespondencesError(
                f"{int(mask.sum())} correspondences under gate {tau:.4g} m")
        history.append(float(np.mean(d[mask] ** 2)))
        r_new, t_new = _procrustes_arrays(src_pts[mask], ref_pts[idx[mask]])
        step = _motion(r_new, t_new, r, t, radius)
        r, t = r_new, t_new
        if step < eps:
            converged = True
            break
    moved = src_pts @ r.T + t
    d, _ = ref_tree.query(moved, workers=workers)
    matched = d[d < tau]
    if matched.size == 0:
        raise DegenerateCorrespondencesError("no correspondences at final pose")
    rmse = float(np.sqrt(np.mean(matched ** 2)))
    return RigidTransform(r, t), rmse, it, converged, tuple(history)


def _trimmed_pull_in(src_pts: np.ndarray, ref_pts: np.ndarray, ref_tree: cKDTree,
                     init: RigidTransform, iters: int = 6,
                     keep: float = 0.55) -> RigidTransform:
    """Gate-free trimmed ICP: converges from far away, at the cost of bias."""
    r = init.rotation
    t = init.translation
    n_keep = max(3, int(src_pts.shape[0] * keep))
    workers = _workers_for(src_pts.shape[0])
    for _ in range(iters):
        moved = src_pts @ r.T + t
        d, idx = ref_tree.query(moved, workers=workers)
        order = np.argpartition(d, n_keep - 1)[:n_keep]
        r, t = _procrustes_arrays(src_pts[order], ref_pts[idx[order]])
    return RigidTransform(r, t)


def icp(source: PointCloud, reference: PointCloud, init: RigidTransform,
        params: MatchParams = MatchParams()) -> RegistrationResult:
    """Refine ``init`` by iterating gated 1-NN correspondence and SVD updates.

    Correspondences run on the raw clouds; the gate tau comes from the
    voxel-filtered reference spacing so it is insensitive to raw density.
    Stops when the implied maximum point motion drops below
    ``convergence_eps`` or after ``max_icp_iters`` iterations (then
    ``converged`` is False; that is not an error).
    """
    if len(source) < 3 or len(reference) < 3:
        raise TooFewPointsError("icp needs >= 3 points in source and reference")
    tau = _tau_for(reference, params)
    tree = cKDTree(reference.points)
    tr, rmse, iters, converged, history = _icp_core(
        source.points, reference.points, tree, tau, init, params)
    ov = overlap_ratio(PointCloud(tr.apply(source.points)), reference, params)
    return RegistrationResult(tr, ov, rmse, iters, converged,
                              objective_history=history)


# ---------------------------------------------------------------------------
# coarse candidates
# ---------------------------------------------------------------------------

_TILT_GRID_UPS = 40
_TILT_PREKEEP = 48
_TILT_KEEP = 12


def _fibonacci_sphere(m: int) -> np.ndarray:
    i = np.arange(m)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * (i + 0.5) / m
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _tilt_to_z(u: np.ndarray) -> np.ndarray:
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(u, z)
    s = float(np.linalg.norm(v))
    c = float(u @ z)
    if s < 1e-12:
        return np.eye(3) if c > 0 else rotation_about_axis(np.array([1.0, 0.0, 0.0]), math.pi)
    return rotation_about_axis(v, math.atan2(s, c))


_GRID_CACHE: dict[int, np.ndarray] = {}


def _orientation_grid(yaw_seeds: int) -> np.ndarray:
    """Constant tilt-times-yaw rotation hypotheses, cached per yaw count."""
    grid = _GRID_CACHE.get(yaw_seeds)
    if grid is None:
        yaws = [_rz(2.0 * math.pi * k / yaw_seeds) for k in range(yaw_seeds)]
        grid = np.array([yaw @ _tilt_to_z(up)
                         for up in _fibonacci_sphere(_TILT_GRID_UPS)
                         for yaw in yaws])
        _GRID_CACHE[yaw_seeds] = grid
    return grid


def _principal_axes(pts: np.ndarray, c: np.ndarray) -> np.ndarray:
    cov = (pts - c).T @ (pts - c) / pts.shape[0]
    w, v = np.linalg.eigh(cov)
    if w[0] <= max(w[2] * 1e-10, 1e-30):
        raise DegenerateCovarianceError(
            f"covariance eigenvalues {w} are rank-deficient")
    v = v[:, ::-1]  # descending variance
    if np.linalg.det(v) < 0:
        v[:, 2] = -v[:, 2]
    return v


def coarse_align(source: PointCloud, reference: PointCloud,
                 yaw_seeds: int = 12,
                 params: MatchParams = MatchParams(), *,
                 _src_c: PointCloud | None = None,
                 _ref_c: PointCloud | None = None) -> list[RigidTransform]:
    """Initialization candidates for multi-start ICP.

    Always emits the centroid shift, the four proper principal-axes
    alignments and ``yaw_seeds`` rotations about the reference Z axis. A
    partial view can additionally sit at an arbitrary tilt that none of
    those covers, so a fibonacci grid of tilt-times-yaw orientations is
    scored cheaply (matched fraction at the coarse gate, centroid-matched
    translation) and the best few are appended. Raises when either cloud
    has no three independent directions.
    """
    if len(source) < 10 or len(reference) < 10:
        raise TooFewPointsError("coarse_align needs >= 10 points per cloud")
    c_src = source.centroid()
    c_ref = reference.centroid()
    a_src = _principal_axes(source.points, c_src)
    a_ref = _principal_axes(reference.points, c_ref)

    candidates = [RigidTransform(np.eye(3), c_ref - c_src)]
    for s1, s2 in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        r = a_ref @ np.diag([s1, s2, s1 * s2]).astype(float) @ a_src.T
        candidates.append(RigidTransform(r, c_ref - r @ c_src))
    for k in range(yaw_seeds):
        r = _rz(2.0 * math.pi * k / yaw_seeds)
        candidates.append(RigidTransform(r, c_ref - r @ c_src))

    # pre-scored tilt grid (skipped for clouds too small to discriminate).
    # The static matched-fraction score barely separates orientations, so
    # the leaders get a few trimmed alignment steps before the final pick.
    coarse_voxel = 2.0 * params.voxel
    src_c = _src_c if _src_c is not None else voxel_downsample(source, coarse_voxel)
    ref_c = _ref_c if _ref_c is not None else voxel_downsample(reference, coarse_voxel)
    if len(src_c) >= 10 and len(ref_c) >= 10:
        tau_c = params.tau_factor * average_spacing(ref_c)
        tree_c = cKDTree(ref_c.points)
        cs = src_c.points.mean(axis=0)
        cr = ref_c.points.mean(axis=0)
        sub = src_c.points
        if sub.shape[0] > 64:
            sub = sub[np.linspace(0, sub.shape[0] - 1, 64).astype(int)]
        rots = _orientation_grid(yaw_seeds)
        trans = cr - np.einsum("hij,j->hi", rots, cs)
        moved = np.einsum("hij,nj->hni", rots, sub) + trans[:, None, :]
        d, _ = tree_c.query(moved.reshape(-1, 3), workers=-1)
        frac = (d.reshape(len(rots), -1) < tau_c).mean(axis=1)
        n_keep = max(3, int(0.7 * sub.shape[0]))
        rescored = []
        for h in np.argsort(-frac)[:_TILT_PREKEEP]:
            r, t = rots[h], trans[h]
            for _ in range(2):
                dh, ih = tree_c.query(sub @ r.T + t, workers=1)
                top = np.argpartition(dh, n_keep - 1)[:n_keep]
                r, t = _procrustes_arrays(sub[top], ref_c.points[ih[top]])
            dh, _ = tree_c.query(sub @ r.T + t, workers=1)
            rescored.append((float((dh < tau_c).mean()), r, t))
        rescored.sort(key=lambda s: -s[0])
        for _, r, t in rescored[:_TILT_KEEP]:
            candidates.append(RigidTransform(r, t))
    return candidates


# ---------------------------------------------------------------------------
# overlap and selection
# ---------------------------------------------------------------------------

def overlap_ratio(aligned_source: PointCloud, reference: PointCloud,
                  params: MatchParams = MatchParams()) -> float:
    """Matched source points under tau divided by reference point count.

    Both clouds are voxel-filtered at ``params.voxel`` first; a source point
    matches when its nearest reference neighbor is closer than
    ``tau_factor * average_spacing`` of the filtered reference.
    """
    if len(aligned_source) == 0 or len(reference) == 0:
        raise EmptyCloudError("overlap_ratio needs two non-empty clouds")
    src_f = voxel_downsample(aligned_source, params.voxel)
    ref_f = voxel_downsample(reference, params.voxel)
    tau = _tau_for(reference, params, ref_filtered=ref_f)
    d, _ = cKDTree(ref_f.points).query(src_f.points, workers=_workers_for(len(src_f)))
    matched = int((d < tau).sum())
    return min(1.0, matched / len(ref_f))


_AMBIGUITY_OR_BAND = 0.02
_AMBIGUITY_ANGLE_DEG = 5.0
_BAND_REFINE_LIMIT = 5
_STAGE1_ITERS = 9
_STAGE2_ITERS = 14
_ANNEAL_GATES = (2.0, 1.0)


def _anneal(src_pts, ref_pts, tree, tau, start, params, budget, pull_in=4,
            eps_scale=1e-4, gates=_ANNEAL_GATES):
    """Pull-in phase then gated ICP with a shrinking gate."""
    cur = _trimmed_pull_in(src_pts, ref_pts, tree, start, iters=pull_in)
    rmse = math.inf
    iters = pull_in
    conv = False
    history: tuple[float, ...] = ()
    for gate_mult in gates:
        cur, rmse, it, conv, history = _icp_core(
            src_pts, ref_pts, tree, gate_mult * tau, cur, params,
            max_iters=budget, eps=max(params.convergence_eps, eps_scale * tau))
        iters += it
    return cur, rmse, iters, conv, history


def _dedupe_transforms(cands: list[RigidTransform], angle_deg: float = 3.0,
                       dist: float = 0.01) -> list[RigidTransform]:
    """Drop candidates within (angle, distance) of an earlier one."""
    cos_half = math.cos(math.radians(angle_deg) / 2.0)
    kept: list[RigidTransform] = []
    quats: list[np.ndarray] = []
    from .geometry import quaternion_from_rotation
    for c in cands:
        q = quaternion_from_rotation(c.rotation)
        dup = any(
            abs(float(q @ qk)) >= cos_half
            and float(np.linalg.norm(c.translation - k.translation)) < dist
            for qk, k in zip(quats, kept))
        if not dup:
            kept.append(c)
            quats.append(q)
    return kept


def register(source: PointCloud, reference: PointCloud,
             params: MatchParams = MatchParams()) -> RegistrationResult:
    """Multi-start registration: ICP from every coarse candidate.

    Every candidate runs a capped pull-in + annealed-gate ICP on coarsely
    voxel-filtered clouds; the leaders (overlap at the official voxel size
    within a small band of the maximum) are refined at official resolution
    and re-ranked, ties broken by inlier RMSE against the raw reference.
    Overlap saturates for any surface-hugging pose of a partial scan, so
    the RMSE tie-break is what separates "slid" poses from the true one.
    The winner gets a final annealed refinement on the raw clouds at the
    official gate. If a refined runner-up ties the winner's overlap *and*
    residual with a clearly different rotation, the result is flagged
    ``ambiguous`` (rotationally symmetric geometry cannot be trusted).
    """
    coarse_voxel = 2.0 * params.voxel
    src_c = voxel_downsample(source, coarse_voxel)
    ref_c = voxel_downsample(reference, coarse_voxel)
    src_f = voxel_downsample(source, params.voxel)
    ref_f = voxel_downsample(reference, params.voxel)
    if len(src_f) < 3 or len(ref_f) < 3:
        raise TooFewPointsError("voxel-filtered clouds too small to register")
    # duplicate starts converge identically; collapse them before the sweep
    candidates = _dedupe_transforms(coarse_align(
        source, reference, params=params, _src_c=src_c, _ref_c=ref_c))
    use_coarse = len(src_c) >= 10 and len(ref_c) >= 10
    stage_src, stage_ref = (src_c, ref_c) if use_coarse else (src_f, ref_f)
    tau_stage = (params.tau_factor * average_spacing(stage_ref)
                 if len(stage_ref) >= 2 else _tau_for(reference, params))
    tree_stage = cKDTree(stage_ref.points)
    tau = _tau_for(reference, params, ref_filtered=ref_f)
    tree_full = cKDTree(reference.points)
    sub_f = src_f.points
    if sub_f.shape[0] > 256:
        sub_f = sub_f[np.linspace(0, sub_f.shape[0] - 1, 256).astype(int)]
    sub_raw = source.points
    if sub_raw.shape[0] > 256:
        sub_raw = sub_raw[np.linspace(0, sub_raw.shape[0] - 1, 256).astype(int)]
    ov_scale = len(src_f) / (sub_f.shape[0] * len(ref_f))
    score_pts = np.vstack([sub_f, sub_raw])
    n_f = sub_f.shape[0]

    def _score(tr: RigidTransform) -> tuple[float, float] | None:
        """(overlap at official voxel, inlier RMSE against raw reference)."""
        d, _ = tree_full.query(score_pts @ tr.rotation.T + tr.translation,
                               workers=1)
        ov = min(1.0, int((d[:n_f] < tau).sum()) * ov_scale)
        m = d[n_f:][d[n_f:] < tau]
        if m.size == 0:
            return None
        return ov, float(np.sqrt(np.mean(m ** 2)))

    scored = []
    last_error: Exception | None = None
    for cand in candidates:
        try:
            tr, _, iters, _, _ = _anneal(
                stage_src.points, stage_ref.points, tree_stage, tau_stage,
                cand, params, _STAGE1_ITERS, pull_in=3, eps_scale=0.05,
                gates=(1.5,))
        except DegenerateCorrespondencesError as exc:
            last_error = exc
            continue
        s = _score(tr)
        if s is not None:
            scored.append((s[0], s[1], tr, iters))
    if not scored:
        raise last_error if last_error is not None else DegenerateCorrespondencesError(
            "no coarse candidate produced correspondences")

    # refine the overlap-band leaders at official resolution and re-rank
    max_ov = max(s[0] for s in scored)
    band = sorted((s for s in scored if s[0] >= max_ov - _AMBIGUITY_OR_BAND),
                  key=lambda s: s[1])
    band_keep = _dedupe_transforms([s[2] for s in band])[:_BAND_REFINE_LIMIT]
    band = [s for s in band if any(s[2] is k for k in band_keep)]
    tree_f = cKDTree(ref_f.points)
    refined = []
    for _, _, tr, iters in band:
        try:
            tr2, _, it2, _, _ = _anneal(
                src_f.points, ref_f.points, tree_f, tau, tr, params,
                _STAGE2_ITERS, pull_in=2, eps_scale=0.01, gates=(1.0,))
        except DegenerateCorrespondencesError:
            continue
        s = _score(tr2)
        if s is not None:
            refined.append((s[0], s[1], tr2, iters + it2))
    if not refined:
        refined = [band[0]]
    max_ov = max(s[0] for s in refined)
    final_band = sorted((s for s in refined if s[0] >= max_ov - _AMBIGUITY_OR_BAND),
                        key=lambda s: s[1])
    best_ov, best_rmse, best_tr, stage_iters = final_band[0]

    def _full_refine(start: RigidTransform):
        """Final full-resolution polish: short pull-in, then official gate."""
        cur = _trimmed_pull_in(source.points, reference.points, tree_full,
                               start, iters=2)
        cur, _, it_a, _, _ = _icp_core(
            source.points, reference.points, tree_full, _ANNEAL_GATES[0] * tau,
            cur, params, max_iters=8, eps=max(params.convergence_eps, 1e-4 * tau))
        tr, rmse, it_b, converged, history = _icp_core(
            source.points, reference.points, tree_full, tau, cur, params)
        return tr, rmse, 2 + it_a + it_b, converged, history

    tr, rmse, iters, converged, history = _full_refine(best_tr)
    final_score = _score(tr)

    # Symmetry diagnostic. A runner-up that still ties after its own full
    # refinement, with a clearly different rotation, means the geometry
    # genuinely supports several poses; transient near-ties that dissolve
    # under refinement do not count. A converged surface-respecting
    # alternative scores rmse ~= 1.13x the raw reference spacing (mean NN
    # distance of random surface points to a Poisson sampling), so the tie
    # floor sits just above that; geometric misfits land far higher.
    rmse_floor = 1.3 * average_spacing(reference)
    prelim_tie = max(2.0 * best_rmse, rmse_floor)
    ambiguous = False
    if final_score is not None:
        for _, rmse_c, tr_c, _ in final_band[1:3]:
            if rmse_c > prelim_tie:
                continue
            if rotation_angle_deg(tr_c.rotation, best_tr.rotation) <= _AMBIGUITY_ANGLE_DEG:
                continue
            tr_c2, _, _, _, _ = _full_refine(tr_c)
            s = _score(tr_c2)
            if (s is not None
                    and s[0] >= final_score[0] - _AMBIGUITY_OR_BAND
                    and s[1] <= max(2.0 * final_score[1], rmse_floor)
                    and rotation_angle_deg(tr_c2.rotation, tr.rotation) > _AMBIGUITY_ANGLE_DEG):
                ambiguous = True
                break

    ov = overlap_ratio(PointCloud(tr.apply(source.points)), reference, params)
    return RegistrationResult(tr, ov, rmse, stage_iters + iters,
                              converged, ambiguous=ambiguous,
                              objective_history=history)
