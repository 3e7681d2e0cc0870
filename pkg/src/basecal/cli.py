"""Command-line entry point.

Subcommands: synth, register, calibrate (eye-in-hand|eye-to-hand),
evaluate (plane|sphere), metrics, fk.

stdout carries machine-readable JSON only (one envelope per run,
``{"ok": ..., "result"|"error": ..., "version": ...}``); human-readable
summaries go to stderr. Exit codes: 0 success, 2 configuration error,
3 I/O error, 4 ambiguous pose, 5 registration failure. Lengths print in
millimeters for humans and are stored in meters in JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .basepose import ReferenceModel, filtered_base_pose
from .errors import (
    AllShotsRejectedError,
    AmbiguousPoseError,
    BasecalError,
    DegenerateCorrespondencesError,
    DegenerateCovarianceError,
    ParseError,
    RoiTooSparseError,
    TooFewPointsError,
    UnsupportedFormatError,
)
from .evalharness import (
    dynamic_test,
    format_comparison,
    offset_report,
    static_test,
)
from .geometry import RigidTransform, to_euler
from .handeye import (
    DhTable,
    forward_kinematics,
    solve_eye_to_hand,
    solve_single_shot_eye_in_hand,
)
from .metrics import rmse_transform
from .pointcloud import Aabb, crop, load
from .registration import MatchParams, register
from .synthdata import generate_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_AMBIGUOUS = 4
EXIT_REGISTRATION = 5

_REGISTRATION_FAILURES = (
    DegenerateCorrespondencesError,
    DegenerateCovarianceError,
    AllShotsRejectedError,
    RoiTooSparseError,
    TooFewPointsError,
)


class ConfigError(Exception):
    pass


def _fail_config(field: str, message: str):
    raise ConfigError(f"--{field}: {message}")


def _existing_path(field: str, value: str) -> Path:
    p = Path(value)
    if not p.exists():
        _fail_config(field, f"file not found: {value}")
    return p


def _load_json_arg(field: str, value: str) -> dict:
    """Accept either inline JSON or a path to a JSON file."""
    text = value if value.lstrip().startswith("{") else None
    if text is None:
        text = _existing_path(field, value).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        _fail_config(field, f"invalid JSON ({exc})")


def _parse_joints(value: str) -> list[float]:
    try:
        return [float(tok) for tok in value.replace(";", ",").split(",") if tok.strip()]
    except ValueError:
        _fail_config("joints", f"expected comma-separated radians, got '{value}'")


def _match_params(args) -> MatchParams:
    return MatchParams(
        tau_factor=args.tau_factor,
        voxel=args.voxel,
        max_icp_iters=args.max_icp_iters,
        convergence_eps=args.convergence_eps,
        trim_fraction=args.trim_fraction,
    )


def _emit(args, payload: dict, human: list[str] | None = None) -> None:
    text = json.dumps(payload, sort_keys=True)
    if getattr(args, "json_out", None):
        Path(args.json_out).write_text(text + "\n")
    print(text)
    for line in human or []:
        print(line, file=sys.stderr)


def _envelope_ok(result: dict) -> dict:
    return {"ok": True, "result": result, "version": __version__}


def _envelope_err(exc: Exception) -> dict:
    return {"ok": False,
            "error": {"type": type(exc).__name__, "message": str(exc)},
            "version": __version__}


def _transform_human(t: RigidTransform, title: str) -> list[str]:
    e = to_euler(t.rotation)
    mm = t.translation * 1000.0
    lines = [title]
    for row in t.matrix:
        lines.append("  [" + "  ".join(f"{v: .6f}" for v in row) + "]")
    lines.append(
        f"  euler ZYX (deg): alpha={math.degrees(e.alpha):.4f} "
        f"beta={math.degrees(e.beta):.4f} gamma={math.degrees(e.gamma):.4f}")
    lines.append(f"  translation (mm): [{mm[0]:.3f}, {mm[1]:.3f}, {mm[2]:.3f}]")
    return lines


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    model = _existing_path("model", args.model)
    radius_range = None
    if args.radius_min is not None or args.radius_max is not None:
        if args.radius_min is None or args.radius_max is None:
            _fail_config("radius-min/--radius-max", "both or neither")
        radius_range = (args.radius_min, args.radius_max)
    manifest = generate_dataset(
        model, args.out, n_viewpoints=args.viewpoints, k_augment=args.augment,
        rng_seed=args.seed, radius_range=radius_range, rot_max=args.rot_max,
        trans_max=args.trans_max, noise_sigma=args.noise_sigma)
    print(f"{len(manifest)} records")
    print(str(Path(args.out) / "manifest.json"))
    return EXIT_OK


def _cmd_register(args) -> int:
    source = load(_existing_path("source", args.source))
    reference = load(_existing_path("reference", args.reference))
    result = register(source, reference, _match_params(args))
    _emit(args, _envelope_ok(result.to_json_dict()),
          _transform_human(result.transform, "source -> reference:")
          + [f"  overlap: {result.overlap_ratio:.3f}  "
             f"rmse: {result.inlier_rmse * 1000:.3f} mm"])
    return EXIT_OK


def _load_shots(args) -> list:
    if args.scan:
        return [load(_existing_path("scan", args.scan))]
    shot_dir = _existing_path("shots", args.shots)
    files = sorted(p for p in shot_dir.iterdir()
                   if p.suffix.lower() in (".ply", ".xyz", ".txt", ".asc"))
    if not files:
        _fail_config("shots", f"no point-cloud files in {shot_dir}")
    return [load(p) for p in files]


def _cmd_calibrate(args) -> int:
    joints = _parse_joints(args.joints)
    if not joints:
        _fail_config("joints", "at least one joint angle required")
    box = Aabb.from_json_dict(_load_json_arg("box", args.box))
    model_cloud = load(_existing_path("model", args.model))
    adjust = (RigidTransform.from_json_dict(_load_json_arg("adjust", args.adjust))
              if args.adjust else RigidTransform.identity())
    model = ReferenceModel(cloud=model_cloud, adjust=adjust)
    shots = _load_shots(args)

    estimate = filtered_base_pose(shots, box, model, theta1=joints[0],
                                  params=_match_params(args),
                                  or_threshold=args.or_threshold)
    if estimate.ambiguous and not args.allow_ambiguous:
        raise AmbiguousPoseError(
            "near-tied alignments disagree; pass --allow-ambiguous to accept")

    if args.mode == "eye-in-hand":
        if not args.dh:
            _fail_config("dh", "required for eye-in-hand calibration")
        table = DhTable.from_json_dict(_load_json_arg("dh", args.dh))
        if len(joints) != len(table):
            _fail_config("joints", f"{len(joints)} angles for a "
                                   f"{len(table)}-row DH table")
        base_to_tcp = forward_kinematics(table, joints)
        calib = solve_single_shot_eye_in_hand(base_to_tcp, estimate.cam_to_base)
    else:
        calib = solve_eye_to_hand(estimate)

    result = calib.to_json_dict()
    result["base_pose"] = estimate.to_json_dict()
    _emit(args, _envelope_ok(result),
          _transform_human(calib.transform, f"{calib.mode} transform:")
          + [f"  shots used: {estimate.shots_used}/{len(shots)}  "
             f"overlap: {estimate.overlap_ratio:.3f}"])
    return EXIT_OK


def _load_dir_clouds(field: str, directory: str) -> list:
    d = _existing_path(field, directory)
    files = sorted(p for p in d.iterdir()
                   if p.suffix.lower() in (".ply", ".xyz", ".txt", ".asc"))
    if not files:
        _fail_config(field, f"no point-cloud files in {d}")
    return [(p.name, load(p)) for p in files]


def _cmd_evaluate(args) -> int:
    calib_obj = _load_json_arg("calib", args.calib)
    calib_result = calib_obj.get("result", calib_obj)
    mode = calib_result["mode"]
    x = RigidTransform.from_json_dict(calib_result["transform"])

    crop_box = (Aabb.from_json_dict(_load_json_arg("crop-box", args.crop_box))
                if args.crop_box else None)

    def _prep(cloud):
        return crop(cloud, crop_box) if crop_box is not None else cloud

    static_shots = [_prep(c) for _, c in _load_dir_clouds("static", args.static)]

    dyn_dir = _existing_path("dynamic", args.dynamic)
    poses_path = dyn_dir / "poses.json"
    dynamic_shots = []
    if mode == "eye-in-hand":
        if not poses_path.exists():
            _fail_config("dynamic", f"{poses_path} required for eye-in-hand")
        poses = json.loads(poses_path.read_text())
        for entry in poses:
            cloud = _prep(load(dyn_dir / entry["file"]))
            base_to_tcp = RigidTransform.from_json_dict(entry["base_to_tcp"])
            dynamic_shots.append((cloud, base_to_tcp @ x))
    else:
        to_base = x  # fixed camera: cam -> base is the calibration itself
        for name, cloud in _load_dir_clouds("dynamic", args.dynamic):
            dynamic_shots.append((_prep(cloud), to_base))

    static_rep = static_test(static_shots, args.shape)
    dynamic_rep = dynamic_test(dynamic_shots, args.shape, refine_icp=False)
    offset_rep = offset_report(dynamic_rep, static_rep)
    result = {
        "static": static_rep.to_json_dict(),
        "dynamic": dynamic_rep.to_json_dict(),
        "offset": offset_rep.to_json_dict(),
    }
    human = [format_comparison(static_rep, dynamic_rep, offset_rep)]
    if args.refine_icp:
        refined = dynamic_test(dynamic_shots, args.shape, refine_icp=True,
                               params=_match_params(args))
        result["dynamic_icp"] = refined.to_json_dict()
        result["offset_icp"] = offset_report(refined, static_rep).to_json_dict()

    if args.report:
        Path(args.report).write_text(json.dumps(result, sort_keys=True, indent=2))
    _emit(args, _envelope_ok(result), human)
    return EXIT_OK


def _cmd_metrics(args) -> int:
    est_list = _load_json_arg("est", args.est)
    gt_list = _load_json_arg("gt", args.gt)
    if isinstance(est_list, dict) or isinstance(gt_list, dict):
        _fail_config("est/--gt", "expected JSON arrays of transforms")
    est = [RigidTransform.from_json_dict(o.get("gt", o)) for o in est_list]
    gt = [RigidTransform.from_json_dict(o.get("gt", o)) for o in gt_list]
    err = rmse_transform(est, gt)
    if args.csv_out:
        from .metrics import re as re_metric
        from .metrics import rre, rte
        with open(args.csv_out, "w") as fh:
            fh.write("pair,rre_deg,rte_m,re_deg\n")
            for i, (e, g) in enumerate(zip(est, gt)):
                fh.write(f"{i},{rre(e.rotation, g.rotation)!r},"
                         f"{rte(e.translation, g.translation)!r},"
                         f"{re_metric(e.rotation, g.rotation)!r}\n")
    _emit(args, _envelope_ok(err.to_json_dict()),
          [f"rre: {err.rre:.4f} deg  rte: {err.rte * 1000:.4f} mm  "
           f"re: {err.re:.4f} deg"])
    return EXIT_OK


def _cmd_fk(args) -> int:
    table = DhTable.from_json_dict(_load_json_arg("dh", args.dh))
    joints = _parse_joints(args.joints)
    if len(joints) != len(table):
        _fail_config("joints", f"{len(joints)} angles for a {len(table)}-row table")
    pose = forward_kinematics(table, joints)
    _emit(args, _envelope_ok({"transform": pose.to_json_dict()}),
          _transform_human(pose, "base -> tcp:"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_match_flags(p: argparse.ArgumentParser, defaults: dict) -> None:
    p.add_argument("--voxel", type=float,
                   default=defaults.get("voxel", 0.015),
                   help="voxel size in meters for filtering (default 0.015)")
    p.add_argument("--tau-factor", type=float,
                   default=defaults.get("tau_factor", 1.5),
                   help="gate = tau-factor x reference spacing (default 1.5)")
    p.add_argument("--max-icp-iters", type=int,
                   default=defaults.get("max_icp_iters", 60))
    p.add_argument("--convergence-eps", type=float,
                   default=defaults.get("convergence_eps", 1e-6))
    p.add_argument("--trim-fraction", type=float,
                   default=defaults.get("trim_fraction", 0.1))


def build_parser(defaults: dict | None = None) -> argparse.ArgumentParser:
    d = defaults or {}
    parser = argparse.ArgumentParser(
        prog="basecal",
        description="Hand-eye calibration from point clouds of the robot base")
    parser.add_argument("--config", help="JSON file with default option values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic partial-view dataset")
    p.add_argument("--model", required="model" not in d, default=d.get("model"))
    p.add_argument("--out", required="out" not in d, default=d.get("out"))
    p.add_argument("--viewpoints", type=int, default=d.get("viewpoints", 90))
    p.add_argument("--augment", type=int, default=d.get("augment", 10))
    p.add_argument("--seed", type=int, default=d.get("seed", 0))
    p.add_argument("--radius-min", type=float, default=d.get("radius_min"))
    p.add_argument("--radius-max", type=float, default=d.get("radius_max"))
    p.add_argument("--rot-max", type=float, default=d.get("rot_max", math.pi))
    p.add_argument("--trans-max", type=float, default=d.get("trans_max", 0.5))
    p.add_argument("--noise-sigma", type=float, default=d.get("noise_sigma", 0.0))
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("register", help="align a source cloud onto a reference")
    p.add_argument("--source", required=True)
    p.add_argument("--reference", required=True)
    _add_match_flags(p, d)
    p.add_argument("--json-out")
    p.set_defaults(handler=_cmd_register)

    p = sub.add_parser("calibrate", help="solve the hand-eye transform")
    p.add_argument("mode", choices=["eye-in-hand", "eye-to-hand"])
    p.add_argument("--scan", help="single scan file")
    p.add_argument("--shots", help="directory of repeated scans")
    p.add_argument("--box", required=True,
                   help="detection box JSON ({\"min\":..,\"max\":..}) or file")
    p.add_argument("--model", required="model" not in d, default=d.get("model"),
                   help="reference base model cloud")
    p.add_argument("--adjust", default=d.get("adjust"),
                   help="rigid adjustment raw-reference -> model frame (JSON)")
    p.add_argument("--dh", default=d.get("dh"), help="DH table JSON (eye-in-hand)")
    p.add_argument("--joints", required=True, help="joint angles, radians, CSV")
    p.add_argument("--or-threshold", type=float, default=d.get("or_threshold"))
    p.add_argument("--allow-ambiguous", action="store_true")
    _add_match_flags(p, d)
    p.add_argument("--json-out")
    p.set_defaults(handler=_cmd_calibrate)

    p = sub.add_parser("evaluate", help="static/dynamic reconstruction report")
    p.add_argument("shape", choices=["plane", "sphere"])
    p.add_argument("--static", required=True, help="directory of static shots")
    p.add_argument("--dynamic", required=True,
                   help="directory of dynamic shots (+ poses.json for eye-in-hand)")
    p.add_argument("--calib", required=True, help="calibration result JSON")
    p.add_argument("--report", help="write the full report JSON here")
    p.add_argument("--refine-icp", action="store_true")
    p.add_argument("--crop-box", help="AABB JSON to isolate the object")
    _add_match_flags(p, d)
    p.add_argument("--json-out")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("metrics", help="transform error metrics est vs gt")
    p.add_argument("--est", required=True, help="JSON array of transforms")
    p.add_argument("--gt", required=True, help="JSON array of transforms")
    p.add_argument("--csv-out", help="per-pair metric CSV")
    p.add_argument("--json-out")
    p.set_defaults(handler=_cmd_metrics)

    p = sub.add_parser("fk", help="forward kinematics from a DH table")
    p.add_argument("--dh", required="dh" not in d, default=d.get("dh"))
    p.add_argument("--joints", required=True)
    p.add_argument("--json-out")
    p.set_defaults(handler=_cmd_fk)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("BASECAL_LOG_LEVEL", "WARNING"))
    argv = sys.argv[1:] if argv is None else list(argv)

    # pre-scan for --config so its values can seed the parser defaults
    defaults = {}
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        try:
            defaults = json.loads(Path(cfg_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: --config: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if not isinstance(defaults, dict):
            print("config error: --config: expected a JSON object", file=sys.stderr)
            return EXIT_CONFIG

    parser = build_parser(defaults)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK

    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AmbiguousPoseError as exc:
        print(json.dumps(_envelope_err(exc), sort_keys=True))
        print(f"ambiguous pose: {exc}", file=sys.stderr)
        return EXIT_AMBIGUOUS
    except _REGISTRATION_FAILURES as exc:
        print(json.dumps(_envelope_err(exc), sort_keys=True))
        print(f"registration failed: {exc}", file=sys.stderr)
        return EXIT_REGISTRATION
    except (ParseError, UnsupportedFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BasecalError as exc:
        print(json.dumps(_envelope_err(exc), sort_keys=True))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REGISTRATION


if __name__ == "__main__":
    sys.exit(main())
