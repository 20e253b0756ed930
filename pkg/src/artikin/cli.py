"""Command-line entry point: ``artikin <command> ...``.

Exit codes: 0 success, 2 usage or config error, 3 data error,
4 numerical or degeneracy error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import CONFIG_ENV, ConfigError, load_config
from .errors import ArtikinError, DataError, NumericalError, ParseError, SchemaError, stage
from .joints import (
    calibrate,
    estimate_part_poses,
    joint_from_part_poses,
    load_pose_records,
    part_centers,
)
from .kinematics import JointModel
from .metrics import evaluate, format_csv
from .pipeline import load_segmentation, reference_weights, run_pipeline, write_json, write_text
from .refine import refine
from .segmentation import segment
from .synth import PRESETS, NoiseSpec, benchmark_noise, generate_scene, preset, spec_from_dict
from .tracks import filter_tracks, load_bundle, save_bundle

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _read_json(path, what: str):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{what} {path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None


def _load(path):
    try:
        return load_bundle(path)
    except OSError as exc:
        raise DataError(f"cannot read bundle {path}: {exc.strerror}") from None


def _joint_from_file(path) -> tuple[JointModel, int]:
    d = _read_json(path, "joint file")
    model = JointModel.from_dict(d, where=str(path))
    return model, int(d.get("reference_part", 0))


# -- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.spec:
        spec = spec_from_dict(_read_json(args.spec, "spec file"))
    else:
        noise = benchmark_noise() if args.noise == "benchmark" else NoiseSpec()
        spec = preset(args.preset, seed=args.seed, frames=args.frames, noise=noise)
    save_bundle(generate_scene(spec), args.output)
    return EXIT_OK


def cmd_segment(args) -> int:
    cfg = load_config(args.config)
    ds = _load(args.bundle)
    with stage("filter"):
        tracks = filter_tracks(ds.tracks, cfg.filter)
    with stage("segment"):
        seg = segment(tracks, cfg.solver)
    write_json(args.output, seg.to_dict())
    return EXIT_OK


def _poses_or_estimate(args, tracks, masks, cfg):
    if args.poses:
        return load_pose_records(_read_json(args.poses, "pose file"))
    if masks is None:
        raise DataError("need --segmentation (or --poses) to recover part poses")
    with stage("part-poses"):
        return estimate_part_poses(tracks, masks, cfg.joint)


def cmd_estimate_joint(args) -> int:
    cfg = load_config(args.config)
    ds = _load(args.bundle)
    tracks = filter_tracks(ds.tracks, cfg.filter)
    masks = load_segmentation(args.segmentation, tracks).masks if args.segmentation else None
    seq0, seq1 = _poses_or_estimate(args, tracks, masks, cfg)
    centers = part_centers(tracks, masks) if masks is not None else None
    est = joint_from_part_poses(seq0, seq1, centers, cfg.joint)
    write_json(args.output, est.to_dict())
    if args.poses_out:
        write_json(args.poses_out, est.poses_to_list())
    return EXIT_OK


def cmd_refine(args) -> int:
    cfg = load_config(args.config)
    ds = _load(args.bundle)
    tracks = filter_tracks(ds.tracks, cfg.filter)
    field = load_segmentation(args.segmentation, tracks)
    model, _ = _joint_from_file(args.joint)
    seq0, seq1 = _poses_or_estimate(args, tracks, field.masks, cfg)
    with stage("calibrate"):
        ref, _, ri = calibrate(seq0, seq1)
    with stage("refine"):
        out, rep, _ = refine(model, ref.poses, tracks, reference_weights(field.weights, ri), cfg.refine)
    d = _read_json(args.joint, "joint file")
    d.update(out.to_dict())
    d["refinement"] = rep.to_dict()
    write_json(args.output, d)
    return EXIT_OK


def _eval_one(job):
    path, config_path = job
    cfg = load_config(config_path)
    ds = load_bundle(path)
    if ds.ground_truth is None:
        raise DataError(f"{path}: bundle has no ground truth to evaluate against")
    res = run_pipeline(ds, cfg, scene_id=Path(path).stem)
    return res.report


def cmd_eval(args) -> int:
    if args.batch:
        files = sorted(str(p) for p in Path(args.batch).glob("*.json"))
        if not files:
            raise DataError(f"no bundle files in {args.batch}")
        jobs = [(f, args.config) for f in files]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as ex:
                reports = list(ex.map(_eval_one, jobs))
        else:
            reports = [_eval_one(j) for j in jobs]
        text = format_csv(reports)
        if args.csv:
            write_text(args.csv, text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    if not (args.bundle and args.joint):
        raise ConfigError("eval needs BUNDLE and --joint, or --batch DIR")
    ds = _load(args.bundle)
    if ds.ground_truth is None:
        raise DataError(f"{args.bundle}: bundle has no ground truth to evaluate against")
    model, _ = _joint_from_file(args.joint)
    gt = ds.ground_truth
    if model.frame_count != gt.joint.frame_count:
        raise SchemaError(f"joint has {model.frame_count} states but the bundle has {gt.joint.frame_count} frames")
    masks = None
    if args.segmentation:
        masks = load_segmentation(args.segmentation, ds.tracks).masks
    rep = evaluate(model, gt, masks, ds.tracks if masks is not None else None, scene_id=Path(args.bundle).stem)
    write_json(args.output, rep.to_dict())
    if args.csv:
        write_text(args.csv, format_csv([rep]))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    ds = _load(args.bundle)
    poses = load_pose_records(_read_json(args.poses, "pose file")) if args.poses else None
    if poses is not None and len(poses[0]) != ds.tracks.frame_count:
        raise SchemaError(f"pose file has {len(poses[0])} frames but the bundle has {ds.tracks.frame_count}")
    run_pipeline(ds, cfg, args.out_dir, poses, scene_id=Path(args.bundle).stem)
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="artikin",
        description="Two-part articulation recovery from 3D point tracks.",
        epilog=f"Config files are JSON; ${CONFIG_ENV} names the default. Exit codes: 0 ok, 2 usage, 3 data, 4 numerical.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add_config(sp):
        sp.add_argument("-c", "--config", help=f"pipeline config JSON (default: ${CONFIG_ENV} or built-in defaults)")

    s = sub.add_parser("synth", help="generate a synthetic scene bundle")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", help=f"one of: {', '.join(PRESETS)}")
    g.add_argument("--spec", help="scene spec JSON file")
    s.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    s.add_argument("--frames", type=int, default=60, help="frame count for presets (default 60)")
    s.add_argument("--noise", choices=("none", "benchmark"), default="benchmark",
                   help="preset noise: none, or 2 mm jitter with 2%% outliers and 5%% dropout (default)")
    s.add_argument("-o", "--output", required=True, help="bundle file to write")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("segment", help="split tracks into two rigid parts")
    s.add_argument("bundle", help="trajectory bundle JSON")
    add_config(s)
    s.add_argument("-o", "--output", default="segmentation.json", help="output file (default segmentation.json)")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("estimate-joint", help="classify and fit the joint")
    s.add_argument("bundle", help="trajectory bundle JSON")
    s.add_argument("--segmentation", help="segmentation JSON from `segment`")
    s.add_argument("--poses", help="external N x 2 part pose records; skips pose estimation")
    add_config(s)
    s.add_argument("-o", "--output", default="joint.json", help="output file (default joint.json)")
    s.add_argument("--poses-out", help="also write the part poses used")
    s.set_defaults(func=cmd_estimate_joint)

    s = sub.add_parser("refine", help="refine a joint against the trajectories")
    s.add_argument("bundle", help="trajectory bundle JSON")
    s.add_argument("--joint", required=True, help="joint JSON from `estimate-joint`")
    s.add_argument("--segmentation", required=True, help="segmentation JSON from `segment`")
    s.add_argument("--poses", help="external part pose records (else re-estimated)")
    add_config(s)
    s.add_argument("-o", "--output", default="joint_refined.json", help="output file (default joint_refined.json)")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("eval", help="score a joint (and masks) against ground truth")
    s.add_argument("bundle", nargs="?", help="bundle with ground truth")
    s.add_argument("--joint", help="joint JSON to score")
    s.add_argument("--segmentation", help="segmentation JSON to score")
    s.add_argument("--batch", help="directory of bundles: run the pipeline on each and tabulate")
    s.add_argument("--jobs", type=int, default=1, help="worker processes for --batch (default 1)")
    add_config(s)
    s.add_argument("-o", "--output", default="report.json", help="report file (default report.json)")
    s.add_argument("--csv", help="CSV table to write (batch mode prints to stdout otherwise)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pipeline", help="run every stage and write all artifacts")
    s.add_argument("bundle", help="trajectory bundle JSON")
    add_config(s)
    s.add_argument("--out-dir", default="out", help="directory for outputs (default ./out)")
    s.add_argument("--poses", help="external N x 2 part pose records; skips pose estimation")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"artikin: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"artikin: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"artikin: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ArtikinError as exc:
        print(f"artikin: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
