"""Filter -> segment -> joint -> refine -> evaluate, with file outputs."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import SchemaError, stage
from .joints import (
    JointEstimate,
    calibrate,
    estimate_joint,
    joint_from_part_poses,
    part_centers,
)
from .kinematics import JointModel
from .metrics import MetricsReport, evaluate, format_csv
from .refine import RefineReport, refine
from .segmentation import PartWeightField, SegmentationResult, segment
from .tracks import SceneDataset, TrackSet, filter_tracks


def write_json(path, obj) -> None:
    """Write via a temporary file so a failed run never leaves a half file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, allow_nan=False) + "\n")
    os.replace(tmp, path)


def write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def load_segmentation(path, tracks: TrackSet | None = None) -> PartWeightField:
    try:
        d = json.loads(Path(path).read_text())
        w = np.asarray(d["weights"], dtype=float)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise SchemaError(f"segmentation file {path}: {exc}") from None
    if tracks is not None and w.shape != (tracks.frame_count, tracks.point_count):
        raise SchemaError(f"segmentation file {path}: weights shape {w.shape} does not match the bundle")
    return PartWeightField.from_weights(w)


def reference_weights(weights: np.ndarray, reference_part: int) -> np.ndarray:
    """Frame-0 probability of the reference part (unknown entries take the mean over frames)."""
    w = np.asarray(weights, dtype=float)
    w1 = w[0].copy()
    miss = ~np.isfinite(w1)
    if miss.any():
        w1[miss] = np.nanmean(w[:, miss], axis=0)
    return w1 if reference_part == 1 else 1.0 - w1


def run_refine(est: JointEstimate, tracks: TrackSet, weights: np.ndarray, cfg: PipelineConfig):
    ref, _, ri = calibrate(*est.part_poses)
    return refine(est.joint, ref.poses, tracks, reference_weights(weights, ri), cfg.refine)


@dataclass(eq=False)
class PipelineResult:
    tracks: TrackSet
    segmentation: SegmentationResult
    estimate: JointEstimate
    refined: JointModel
    refine_report: RefineReport
    report: MetricsReport | None = None
    coarse_report: MetricsReport | None = None

    def refined_dict(self) -> dict:
        d = self.estimate.to_dict()
        d.update(self.refined.to_dict())
        d["refinement"] = self.refine_report.to_dict()
        return d

    def report_dict(self) -> dict | None:
        if self.report is None:
            return None
        d = self.report.to_dict()
        d["coarse"] = self.coarse_report.to_dict()
        return d


def run_pipeline(ds: SceneDataset, cfg: PipelineConfig | None = None, out_dir=None, poses=None, scene_id: str = "") -> PipelineResult:
    """Run every stage; with ``out_dir`` each artifact is written as soon as its stage ends."""
    cfg = cfg or PipelineConfig()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    with stage("filter"):
        tracks = filter_tracks(ds.tracks, cfg.filter)
    with stage("segment"):
        seg = segment(tracks, cfg.solver)
    if out is not None:
        write_json(out / "segmentation.json", seg.to_dict())
    with stage("joint"):
        if poses is not None:
            est = joint_from_part_poses(poses[0], poses[1], part_centers(tracks, seg.masks), cfg.joint)
        else:
            est = estimate_joint(tracks, seg.masks, cfg.joint)
    if out is not None:
        write_json(out / "joint.json", est.to_dict())
        write_json(out / "poses.json", est.poses_to_list())
    with stage("refine"):
        refined, rep, _ = run_refine(est, tracks, seg.weights, cfg)
    res = PipelineResult(tracks, seg, est, refined, rep)
    if out is not None:
        write_json(out / "joint_refined.json", res.refined_dict())
    gt = ds.ground_truth
    if gt is not None:
        with stage("eval"):
            res.coarse_report = evaluate(est.joint, gt, seg.masks, tracks, est.part_poses, est.reference_part, scene_id)
            res.report = evaluate(refined, gt, seg.masks, tracks, est.part_poses, est.reference_part, scene_id)
        if out is not None:
            write_json(out / "report.json", res.report_dict())
            write_text(out / "report.csv", format_csv([res.report]))
    return res
