"""Joint estimation from two segmented parts.

Per-part pose sequences are registered against frame 0, calibrated so both
parts start at identity, and turned into relative poses of the moving part
with respect to the reference part. After a 2-sigma step filter the joint is
classified from rotation amplitude and translation linearity, then fitted in
closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CalibrationError,
    DegenerateInputError,
    DegeneratePrismaticError,
    IllConditionedAxisError,
    IllConditionedPivotError,
    InsufficientDataError,
    stage,
)
from .geometry import RigidTransform, is_collinear, project_so3, so3_log
from .kinematics import PRISMATIC, REVOLUTE, JointModel
from .registration import robust_register
from .tracks import TrackSet

RHO_EPS = 1e-12
IQR_FENCE = 1.5


@dataclass(frozen=True)
class JointConfig:
    theta_th_deg: float = 10.0
    rho_th: float = 0.05
    tau_sigma: float = 2.0
    use_filter: bool = True
    ransac_iters: int = 200
    ransac_inlier_threshold: float = 0.02
    seed: int = 0


@dataclass(eq=False)
class PoseSequence:
    """Part-to-camera poses; ``None`` marks an invalid frame."""

    poses: list
    part_index: int = 0

    @property
    def valid(self) -> np.ndarray:
        return np.array([p is not None for p in self.poses])

    def __len__(self) -> int:
        return len(self.poses)


@dataclass(eq=False)
class RelativePoseSeq:
    poses: list  # RigidTransform or None
    inlier_mask: np.ndarray
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __len__(self) -> int:
        return len(self.poses)

    def with_mask(self, mask) -> RelativePoseSeq:
        return RelativePoseSeq(self.poses, np.asarray(mask, dtype=bool), self.center)

    def rotations(self, idx) -> np.ndarray:
        return np.stack([self.poses[i].rotation for i in idx])

    def translations(self, idx) -> np.ndarray:
        return np.stack([self.poses[i].translation for i in idx])

    def center_translations(self, idx) -> np.ndarray:
        """Displacement of ``center`` under each pose, ``R c + t - c``."""
        c = self.center
        return np.stack([self.poses[i].apply(c) - c for i in idx])


@dataclass
class JointTypeFeatures:
    delta_theta_deg: float
    rho: float
    theta_th_deg: float = 10.0
    rho_th: float = 0.05

    def to_dict(self) -> dict:
        return {"delta_theta_deg": self.delta_theta_deg, "rho": self.rho}


# -- part poses ----------------------------------------------------------------


def part_labels(masks) -> np.ndarray:
    """Per-point labels from ``(N, P)`` masks by majority vote, or ``(P,)`` labels as is."""
    m = np.asarray(masks)
    if m.ndim == 1:
        return m.astype(int)
    return (m.mean(axis=0) >= 0.5).astype(int)


def _usable(pts: np.ndarray) -> bool:
    return len(pts) >= 3 and not is_collinear(pts)


def estimate_part_poses(tracks: TrackSet, masks, cfg: JointConfig | None = None) -> tuple[PoseSequence, PoseSequence]:
    """Robust registration of each part from frame 0 to every frame.

    When a part shares too few points with frame 0, the pose is composed
    through the previous frame; when that also fails the frame is invalid.
    """
    cfg = cfg or JointConfig()
    labels = part_labels(masks)
    X, V = tracks.positions, tracks.valid
    out = []
    for k in (0, 1):
        rng = np.random.default_rng([cfg.seed, k])
        part = labels == k
        poses = [RigidTransform.identity() if _usable(X[0, part & V[0]]) else None]
        for i in range(1, tracks.frame_count):
            pose = None
            sel = part & V[0] & V[i]
            if _usable(X[0, sel]):
                R, t = robust_register(X[0, sel], X[i, sel], cfg.ransac_inlier_threshold, cfg.ransac_iters, rng)
                pose = RigidTransform(project_so3(R), t)
            elif poses[-1] is not None:
                sel = part & V[i - 1] & V[i]
                if _usable(X[i - 1, sel]):
                    R, t = robust_register(X[i - 1, sel], X[i, sel], cfg.ransac_inlier_threshold, cfg.ransac_iters, rng)
                    pose = RigidTransform(project_so3(R), t) @ poses[-1]
            poses.append(pose)
        out.append(PoseSequence(poses, k))
    return out[0], out[1]


def motion_magnitude(seq: PoseSequence) -> float:
    vals = [p.angle() + float(np.linalg.norm(p.translation)) for p in seq.poses if p is not None]
    return float(np.mean(vals)) if vals else np.inf


def calibrate(seq0: PoseSequence, seq1: PoseSequence) -> tuple[PoseSequence, PoseSequence, int]:
    """Left-multiply by ``(E_0^k)^-1`` and pick the least-moving part as reference.

    Returns ``(reference, moving, reference_index)``.
    """
    cal = []
    for seq in (seq0, seq1):
        if seq.poses[0] is None:
            raise CalibrationError(f"part {seq.part_index} has no valid frame-0 pose")
        A = seq.poses[0].inverse()
        cal.append(PoseSequence([None if p is None else p @ A for p in seq.poses], seq.part_index))
    m = [motion_magnitude(c) for c in cal]
    ref = 0 if m[0] <= m[1] else 1
    return cal[ref], cal[1 - ref], ref


def relative_pose_sequence(ref: PoseSequence, rel: PoseSequence, center=None) -> RelativePoseSeq:
    """``T_i = (E_i^ref)^-1 ∘ E_i^rel``; frames invalid in either part are outliers."""
    poses, mask = [], []
    for a, b in zip(ref.poses, rel.poses):
        if a is None or b is None:
            poses.append(None)
            mask.append(False)
        else:
            poses.append(a.inverse() @ b)
            mask.append(True)
    c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    return RelativePoseSeq(poses, np.array(mask), c)


# -- noise resistance ------------------------------------------------------------


def step_deviations(seq: RelativePoseSeq):
    """``(frames, dev, sigma)`` for consecutive inlier steps of the center point."""
    idx = np.flatnonzero(seq.inlier_mask)
    p = seq.center_translations(idx)
    steps = np.diff(p, axis=0)
    dev = np.linalg.norm(steps - steps.mean(axis=0), axis=1)
    sigma = float(np.sqrt(np.mean(dev * dev))) if len(dev) else 0.0
    return idx, dev, sigma


def filter_pose_outliers(seq: RelativePoseSeq, tau: float = 2.0) -> RelativePoseSeq:
    """Drop both frames of every step whose deviation from the mean step exceeds ``tau * sigma``.

    ``sigma`` is the root-mean-square deviation, i.e. the standard deviation
    of the step vectors in 3D.
    """
    if np.count_nonzero(seq.inlier_mask) < 3:
        raise InsufficientDataError("pose outlier filter needs at least 3 inlier frames")
    idx, dev, sigma = step_deviations(seq)
    mask = seq.inlier_mask.copy()
    bad = np.flatnonzero(dev > tau * sigma)
    mask[idx[bad]] = False
    mask[idx[bad + 1]] = False
    if np.count_nonzero(mask) < 3:
        raise InsufficientDataError(f"only {np.count_nonzero(mask)} frames survive the outlier filter; need 3")
    return seq.with_mask(mask)


# -- classification ----------------------------------------------------------


def mean_rotation(Rs: np.ndarray) -> np.ndarray:
    return project_so3(Rs.sum(axis=0))


def signed_angles_about_mean(Rs: np.ndarray) -> np.ndarray:
    """Angles of ``R_i R_mean^T`` signed along their dominant rotation direction."""
    Rm = mean_rotation(Rs)
    r = np.stack([so3_log(project_so3(R @ Rm.T)) for R in Rs])
    _, V = np.linalg.eigh(r.T @ r)
    a = V[:, -1]
    return r @ a


def iqr_inliers(x: np.ndarray, fence: float = IQR_FENCE) -> np.ndarray:
    q1, q3 = np.percentile(x, [25, 75])
    iqr = q3 - q1
    return (x >= q1 - fence * iqr) & (x <= q3 + fence * iqr)


def linearity_ratio(p: np.ndarray) -> float:
    C = np.cov((p - p.mean(axis=0)).T, bias=True)
    lam = np.sort(np.linalg.eigvalsh(C))[::-1]
    lam = np.maximum(lam, 0.0)
    return float((lam[1] + lam[2]) / (lam[0] + RHO_EPS))


def joint_type_features(seq: RelativePoseSeq, theta_th_deg: float = 10.0, rho_th: float = 0.05) -> JointTypeFeatures:
    idx = np.flatnonzero(seq.inlier_mask)
    if len(idx) < 3:
        raise InsufficientDataError("joint classification needs at least 3 inlier frames")
    th = signed_angles_about_mean(seq.rotations(idx))
    keep = iqr_inliers(th)
    span = float(np.degrees(th[keep].max() - th[keep].min()))
    rho = linearity_ratio(seq.center_translations(idx))
    return JointTypeFeatures(span, rho, theta_th_deg, rho_th)


def classify_joint(seq: RelativePoseSeq, theta_th_deg: float = 10.0, rho_th: float = 0.05) -> tuple[str, JointTypeFeatures]:
    """Prismatic when the rotation span is small and the translations are nearly linear."""
    f = joint_type_features(seq, theta_th_deg, rho_th)
    kind = PRISMATIC if (f.delta_theta_deg < theta_th_deg and f.rho < rho_th) else REVOLUTE
    return kind, f


# -- closed-form fits ------------------------------------------------------------


def axis_matrix(Rs: np.ndarray) -> np.ndarray:
    """``sum_{i<j} (R_i R_j^T - I)^T (R_i R_j^T - I)``, computed as ``n^2 I - S S^T``."""
    n = len(Rs)
    S = Rs.sum(axis=0)
    return n * n * np.eye(3) - S @ S.T


def angles_about(u: np.ndarray, Rs: np.ndarray) -> np.ndarray:
    """Signed angle of each rotation's action on the plane orthogonal to ``u``."""
    tr = np.trace(Rs, axis1=1, axis2=2)
    uRu = np.einsum("i,nij,j->n", u, Rs, u)
    vee = np.stack([Rs[:, 2, 1] - Rs[:, 1, 2], Rs[:, 0, 2] - Rs[:, 2, 0], Rs[:, 1, 0] - Rs[:, 0, 1]], axis=1)
    return np.arctan2(0.5 * vee @ u, 0.5 * (tr - uRu))


def _fill_states(states: np.ndarray, ok: np.ndarray) -> np.ndarray:
    frames = np.arange(len(states))
    if ok.all():
        return states
    return np.interp(frames, frames[ok], states[ok])


def fit_revolute(seq: RelativePoseSeq, theta_th_deg: float = 10.0) -> JointModel:
    idx = np.flatnonzero(seq.inlier_mask)
    if len(idx) < 3:
        raise InsufficientDataError("revolute fit needs at least 3 inlier frames")
    Rs = seq.rotations(idx)
    ts = seq.translations(idx)
    lam, V = np.linalg.eigh(axis_matrix(Rs))
    if lam[1] - lam[0] <= 1e-9:
        raise IllConditionedAxisError(f"smallest eigenvalue is not unique (gap {lam[1] - lam[0]:.3g})")
    u = V[:, 0]
    th = angles_about(u, Rs)
    span = np.degrees(th.max() - th.min())
    if span < theta_th_deg:
        raise IllConditionedAxisError(f"rotation span {span:.3g} deg is below {theta_th_deg} deg; axis is ill-conditioned")
    if th.mean() < 0:
        u, th = -u, -th

    P = np.eye(3) - np.outer(u, u)
    i, j = np.triu_indices(len(idx), k=1)
    M = (P @ (Rs[j] - Rs[i])).reshape(-1, 3)
    b = (P @ (ts[i] - ts[j])[..., None]).reshape(-1)
    s = np.linalg.svd(M, compute_uv=False)
    if len(s) == 0 or np.count_nonzero(s > 1e-9 * max(s[0], 1e-300)) < 2:
        raise IllConditionedPivotError("pivot system has rank < 2")
    p = np.linalg.lstsq(M, b, rcond=None)[0]
    p = p - (u @ p) * u

    valid = np.array([q is not None for q in seq.poses])
    all_idx = np.flatnonzero(valid)
    states = np.zeros(len(seq))
    states[all_idx] = angles_about(u, np.stack([seq.poses[k].rotation for k in all_idx]))
    states = _fill_states(states, valid)
    return JointModel.revolute(u, p, states - states[0])


def fit_prismatic(seq: RelativePoseSeq) -> JointModel:
    idx = np.flatnonzero(seq.inlier_mask)
    if len(idx) < 3:
        raise InsufficientDataError("prismatic fit needs at least 3 inlier frames")
    p = seq.center_translations(idx)
    pm = p.mean(axis=0)
    C = np.cov((p - pm).T, bias=True)
    lam, V = np.linalg.eigh(C)
    if lam[-1] < 1e-12:
        raise DegeneratePrismaticError("translations do not move; no prismatic axis")
    w = V[:, -1]
    p0 = pm - (pm @ w) * w
    if (p[-1] - p0) @ w < (p[0] - p0) @ w:
        w = -w
        p0 = pm - (pm @ w) * w
    valid = np.array([q is not None for q in seq.poses])
    all_idx = np.flatnonzero(valid)
    states = np.zeros(len(seq))
    states[all_idx] = (seq.center_translations(all_idx) - p0) @ w
    states = _fill_states(states, valid)
    return JointModel.prismatic(w, states - states[0], rotation_offset=mean_rotation(seq.rotations(idx)))


def fit_joint(seq: RelativePoseSeq, kind: str, theta_th_deg: float = 10.0) -> JointModel:
    return fit_revolute(seq, theta_th_deg) if kind == REVOLUTE else fit_prismatic(seq)


# -- end to end -------------------------------------------------------------------


@dataclass(eq=False)
class JointEstimate:
    joint: JointModel
    features: JointTypeFeatures
    reference_part: int
    inlier_mask: np.ndarray
    part_poses: tuple  # raw (part 0, part 1) PoseSequences
    relative: RelativePoseSeq

    @property
    def kind(self) -> str:
        return self.joint.kind

    def to_dict(self) -> dict:
        d = self.joint.to_dict()
        d["reference_part"] = int(self.reference_part)
        d["inlier_mask"] = [bool(v) for v in self.inlier_mask]
        d["features"] = self.features.to_dict()
        return d

    def poses_to_list(self) -> list:
        """Per-frame ``[part0, part1]`` pose records (None for invalid frames)."""
        return [
            [None if p is None else p.to_record() for p in (a, b)]
            for a, b in zip(self.part_poses[0].poses, self.part_poses[1].poses)
        ]


def joint_from_part_poses(seq0: PoseSequence, seq1: PoseSequence, center=None, cfg: JointConfig | None = None) -> JointEstimate:
    """Calibrate, filter, classify and fit from per-part pose sequences.

    ``center`` is a point per part (shape (2, 3)) or a single point, in the
    canonical frame; translations are measured at the moving part's center.
    """
    cfg = cfg or JointConfig()
    with stage("calibrate"):
        ref, rel, ref_index = calibrate(seq0, seq1)
    c = None
    if center is not None:
        c = np.asarray(center, dtype=float)
        if c.ndim == 2:
            c = c[1 - ref_index]
    with stage("relative-poses"):
        seq = relative_pose_sequence(ref, rel, c)
    if cfg.use_filter:
        with stage("pose-filter"):
            seq = filter_pose_outliers(seq, cfg.tau_sigma)
    elif np.count_nonzero(seq.inlier_mask) < 3:
        raise InsufficientDataError("need at least 3 valid frames")
    with stage("classify"):
        kind, feats = classify_joint(seq, cfg.theta_th_deg, cfg.rho_th)
    with stage("fit"):
        joint = fit_joint(seq, kind, cfg.theta_th_deg)
    return JointEstimate(joint, feats, ref_index, seq.inlier_mask.copy(), (seq0, seq1), seq)


def part_centers(tracks: TrackSet, labels) -> np.ndarray:
    labels = part_labels(labels)
    X0, V0 = tracks.positions[0], tracks.valid[0]
    out = np.zeros((2, 3))
    for k in (0, 1):
        sel = (labels == k) & V0
        if sel.any():
            out[k] = X0[sel].mean(axis=0)
    return out


def estimate_joint(tracks: TrackSet, masks, cfg: JointConfig | None = None) -> JointEstimate:
    cfg = cfg or JointConfig()
    labels = part_labels(masks)
    if np.count_nonzero(labels == 0) < 3 or np.count_nonzero(labels == 1) < 3:
        raise InsufficientDataError("segmentation has fewer than 3 points on one part")
    with stage("part-poses"):
        seq0, seq1 = estimate_part_poses(tracks, labels, cfg)
    return joint_from_part_poses(seq0, seq1, part_centers(tracks, labels), cfg)


def load_pose_records(doc) -> tuple[PoseSequence, PoseSequence]:
    """Parse an ``N x 2`` array of row-major 3x4 pose records."""
    from .errors import SchemaError

    if not isinstance(doc, list) or not doc:
        raise SchemaError("poses: expected a non-empty array of frames")
    seqs = ([], [])
    for i, frame in enumerate(doc):
        if not isinstance(frame, list) or len(frame) != 2:
            raise SchemaError(f"poses[{i}]: expected 2 pose records")
        for k in (0, 1):
            rec = frame[k]
            if rec is None:
                seqs[k].append(None)
                continue
            try:
                seqs[k].append(RigidTransform.from_record(rec))
            except (ValueError, TypeError, DegenerateInputError) as exc:
                raise SchemaError(f"poses[{i}][{k}]: {exc}") from None
    return PoseSequence(seqs[0], 0), PoseSequence(seqs[1], 1)
