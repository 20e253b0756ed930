"""Joint refinement against the observed trajectories.

Canonical points ``x`` are the frame-0 observations, or a denoised
template built from the part poses. For frame ``i`` the
reference hypothesis predicts ``E_i x`` and the moving hypothesis
``E_i J(i) G x``, where ``E_i`` is the calibrated reference-part pose,
``J(i)`` the joint transform and ``G`` a rigid offset of the moving part's
canonical geometry. Each point's two residuals are blended by its part
weight under a robust loss and the parameters follow Adam.

``G`` absorbs the constant mismatch between the two parts' registrations to
the noisy frame-0 template; without it that mismatch can only be explained
by tilting the axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailure
from .geometry import RigidTransform, RobustLoss, project_so3, so3_exp
from .kinematics import REVOLUTE, JointModel, joint_transform, joint_transforms
from .optim import Adam
from .tracks import TrackSet

__all__ = ["RefineConfig", "RefineReport", "RefineProblem", "canonical_points", "refine", "joint_transform"]

REFINE_HUBER_DELTA = 0.01  # meters
REFINE_TUKEY_C = 0.01  # meters; samples beyond this carry no weight
# short second-moment memory: the early large gradients otherwise freeze the
# small steps needed to slide along the axis/state valley
ADAM_BETA2 = 0.9


@dataclass(frozen=True)
class RefineConfig:
    iters: int = 500
    lr: float = 1e-3
    loss: RobustLoss = RobustLoss.tukey(REFINE_TUKEY_C)
    refine_reference_poses: bool = False
    refine_weights: bool = False
    refine_moving_offset: bool = True
    cosine_decay: bool = True

    def __post_init__(self):
        if self.iters < 1 or not self.lr > 0:
            raise ValueError("refinement needs iters >= 1 and lr > 0")


@dataclass
class RefineReport:
    initial_objective: float
    final_objective: float
    trace: list = field(default_factory=list)
    best_iteration: int = 0
    weights: np.ndarray | None = None  # refined reference weights, when requested

    def to_dict(self) -> dict:
        return {
            "initial_objective": self.initial_objective,
            "final_objective": self.final_objective,
            "best_iteration": self.best_iteration,
            "iterations": len(self.trace) - 1,
        }


def _tangent(g: np.ndarray, u: np.ndarray) -> np.ndarray:
    return g - (g @ u) * u


@dataclass(eq=False)
class RefineProblem:
    """Flattened valid samples ``(frame, point)`` of the refinement objective."""

    frame: np.ndarray  # (M,)
    x: np.ndarray  # (M, 3) canonical positions
    target: np.ndarray  # (M, 3)
    point: np.ndarray  # (M,)
    w_ref: np.ndarray  # (P,) probability of the reference part
    n_frames: int
    loss: RobustLoss = RobustLoss.huber(REFINE_HUBER_DELTA)

    @classmethod
    def from_tracks(cls, tracks: TrackSet, w_ref, loss: RobustLoss | None = None, canonical=None) -> RefineProblem:
        """Samples of ``tracks``; canonical points are ``canonical`` where finite, else frame 0."""
        X = tracks.positions
        C = X[0].copy()
        known = tracks.valid[0].copy()
        if canonical is not None:
            canonical = np.asarray(canonical, dtype=float)
            ok = np.all(np.isfinite(canonical), axis=1)
            C[ok] = canonical[ok]
            known |= ok
        i, p = np.nonzero(tracks.valid & known[None])
        return cls(i, C[p], X[i, p], p, np.asarray(w_ref, dtype=float), tracks.frame_count, loss or RobustLoss.tukey(REFINE_TUKEY_C))

    def objective(self, kind, u, o, states, ref_R, ref_t, w_logits=None, grad: bool = False, offset=None):
        """Objective value, and with ``grad`` a dict of gradients.

        Gradients: ``u`` projected to the tangent of the sphere, ``o``
        projected to the plane orthogonal to ``u``, ``states`` per frame,
        ``ref_w``/``ref_t`` left increments of the reference poses,
        ``logits`` of the reference weight when ``w_logits`` is given, and
        ``off_w``/``off_t`` left increments of ``offset``, a rigid
        ``(R, t)`` applied to the canonical points of the moving hypothesis.
        """
        u = np.asarray(u, dtype=float)
        fr = self.frame
        x = self.x
        xm = x if offset is None else x @ offset[0].T + offset[1]
        if w_logits is not None:
            w = 0.5 * (1.0 + np.tanh(0.5 * w_logits))
        else:
            w = self.w_ref
        wp = w[self.point]
        s = np.asarray(states, dtype=float)[fr]
        if kind == REVOLUTE:
            o = np.asarray(o, dtype=float)
            v = xm - o
            c, sn = np.cos(s)[:, None], np.sin(s)[:, None]
            uxv = np.cross(u, v)
            uv = v @ u
            Rv = c * v + sn * uxv + (1.0 - c) * uv[:, None] * u
            y = Rv + o
        else:
            y = xm + s[:, None] * u
        Rr = ref_R[fr]
        tr = ref_t[fr]
        z0 = np.einsum("mij,mj->mi", Rr, x) + tr
        z1 = np.einsum("mij,mj->mi", Rr, y) + tr
        e0 = z0 - self.target
        e1 = z1 - self.target
        r0 = np.sqrt(np.einsum("ij,ij->i", e0, e0))
        r1 = np.sqrt(np.einsum("ij,ij->i", e1, e1))
        rho0 = self.loss.value(r0)
        rho1 = self.loss.value(r1)
        F = float(np.sum(wp * rho0 + (1.0 - wp) * rho1))
        if not np.isfinite(F):
            raise NumericalFailure("refinement objective is not finite")
        if not grad:
            return F
        g0 = (wp * self.loss.weight(r0))[:, None] * e0
        g1 = ((1.0 - wp) * self.loss.weight(r1))[:, None] * e1
        gy = np.einsum("mji,mj->mi", Rr, g1)  # R_ref^T g
        out = {}
        if kind == REVOLUTE:
            dth = np.einsum("ij,ij->i", gy, np.cross(u, Rv))
            # (I - R)^T g_y with R^T g = c g - s (u x g) + (1-c)(u.g) u
            ug = gy @ u
            RTg = c * gy - sn * np.cross(u, gy) + (1.0 - c) * ug[:, None] * u
            go = (gy - RTg).sum(axis=0)
            # J_u^T g_y with J_u = -s [v]x + (1-c)(u v^T + (u.v) I)
            gu = sn * np.cross(v, gy) + (1.0 - c) * (v * ug[:, None] + uv[:, None] * gy)
            out["u"] = _tangent(gu.sum(axis=0), u)
            out["o"] = _tangent(go, u)
        else:
            dth = gy @ u
            out["u"] = _tangent((s[:, None] * gy).sum(axis=0), u)
            out["o"] = np.zeros(3)
            RTg = gy
        if offset is not None:
            out["off_t"] = RTg.sum(axis=0)
            out["off_w"] = np.cross(xm, RTg).sum(axis=0)
        out["states"] = np.bincount(fr, weights=dth, minlength=self.n_frames)
        gz = g0 + g1
        out["ref_t"] = np.stack([np.bincount(fr, weights=gz[:, k], minlength=self.n_frames) for k in range(3)], axis=1)
        m0 = np.cross(z0 - tr, g0) + np.cross(z1 - tr, g1)
        out["ref_w"] = np.stack([np.bincount(fr, weights=m0[:, k], minlength=self.n_frames) for k in range(3)], axis=1)
        if w_logits is not None:
            dw = rho0 - rho1
            gl = np.bincount(self.point, weights=dw, minlength=len(w))
            out["logits"] = gl * w * (1.0 - w)
        return F, out


def canonical_points(tracks: TrackSet, w_ref, ref_poses, moving_poses) -> np.ndarray:
    """Per-point canonical position from the calibrated part poses.

    Every valid observation is mapped back through its part's pose and the
    coordinate-wise median is kept, so the template carries far less noise
    than the single frame-0 sample and ignores teleported samples. Points
    without any usable frame are NaN.
    """
    X, V = tracks.positions, tracks.valid
    is_ref = np.asarray(w_ref, dtype=float) >= 0.5
    B = np.full(X.shape, np.nan)
    for i in range(tracks.frame_count):
        for sel, pose in ((is_ref, ref_poses[i]), (~is_ref, moving_poses[i])):
            if pose is None:
                continue
            m = V[i] & sel
            B[i, m] = pose.inverse().apply(X[i, m])
    out = np.full((tracks.point_count, 3), np.nan)
    seen = np.any(np.isfinite(B[:, :, 0]), axis=0)
    out[seen] = np.nanmedian(B[:, seen], axis=0)
    return out


def refine(model: JointModel, ref_poses, tracks: TrackSet, w_ref, cfg: RefineConfig | None = None, canonical=None):
    """Refine ``model`` (and optionally the reference poses / weights).

    ``ref_poses`` are calibrated reference-part poses per frame (``None``
    allowed, treated as unobserved). ``w_ref`` is each point's probability of
    belonging to the reference part. ``canonical`` optionally replaces the
    frame-0 observations as canonical points (see :func:`canonical_points`). Returns ``(model, report, ref_poses)``;
    the best iterate is returned so the objective never increases.
    """
    cfg = cfg or RefineConfig()
    N = tracks.frame_count
    ok = np.array([p is not None for p in ref_poses])
    V = tracks.valid & ok[:, None]
    prob = RefineProblem.from_tracks(tracks.with_valid(V), w_ref, cfg.loss, canonical)
    ref_R = np.stack([p.rotation if p is not None else np.eye(3) for p in ref_poses])
    ref_t = np.stack([p.translation if p is not None else np.zeros(3) for p in ref_poses])
    # work about the object centroid so tilting u does not drag a far-away pivot
    c = prob.x.mean(axis=0) if len(prob.x) else np.zeros(3)
    prob.x = prob.x - c
    prob.target = prob.target - c
    ref_t = ref_t + ref_R @ c - c
    kind = model.kind
    u = model.axis.copy()
    o = model.pivot - c if kind == REVOLUTE else np.zeros(3)
    o = o - (o @ u) * u
    s = model.states.copy()
    logits = None
    if cfg.refine_weights:
        wr = np.clip(np.asarray(w_ref, dtype=float), 1e-7, 1 - 1e-7)
        logits = np.log(wr) - np.log1p(-wr)

    n_ref = 6 * (N - 1) if cfg.refine_reference_poses else 0
    n_w = len(logits) if logits is not None else 0
    n_off = 6 if cfg.refine_moving_offset else 0
    off_R, off_t = np.eye(3), np.zeros(3)
    size = 6 + (N - 1) + n_ref + n_w + n_off
    opt = Adam(size, cfg.lr, beta2=ADAM_BETA2)
    trace = []
    best = None
    for k in range(cfg.iters + 1):
        F, g = prob.objective(kind, u, o, s, ref_R, ref_t, logits, grad=True, offset=(off_R, off_t) if n_off else None)
        trace.append(F)
        if best is None or F < best[0]:
            best = (F, k, u.copy(), o.copy(), s.copy(), ref_R.copy(), ref_t.copy(), None if logits is None else logits.copy(), off_R.copy(), off_t.copy())
        if k == cfg.iters:
            break
        parts = [g["u"], g["o"], g["states"][1:]]
        if n_ref:
            parts += [g["ref_w"][1:].ravel(), g["ref_t"][1:].ravel()]
        if n_w:
            parts.append(g["logits"])
        if n_off:
            parts += [g["off_w"], g["off_t"]]
        lr = cfg.lr * 0.5 * (1.0 + np.cos(np.pi * k / cfg.iters)) if cfg.cosine_decay else cfg.lr
        step = opt.step(np.concatenate(parts), lr)
        du, do, ds = step[:3], step[3:6], step[6 : 6 + N - 1]
        u = u - _tangent(du, u)
        u = u / np.linalg.norm(u)
        if kind == REVOLUTE:
            o = o - do
            o = o - (o @ u) * u
        s = s.copy()
        s[1:] -= ds
        off = 6 + N - 1
        if n_ref:
            dw = step[off : off + 3 * (N - 1)].reshape(-1, 3)
            dt = step[off + 3 * (N - 1) : off + n_ref].reshape(-1, 3)
            for i in range(1, N):
                ref_R[i] = project_so3(so3_exp(-dw[i - 1]) @ ref_R[i])
            ref_t[1:] -= dt
            off += n_ref
        if n_w:
            logits = logits - step[off : off + n_w]
            off += n_w
        if n_off:
            E = so3_exp(-step[off : off + 3])
            off_R = project_so3(E @ off_R)
            off_t = E @ off_t - step[off + 3 : off + 6]

    F, kbest, u, o, s, ref_R, ref_t, logits, off_R, off_t = best
    o = o + c
    ref_t = ref_t - ref_R @ c + c
    out = JointModel.revolute(u, o, s) if kind == REVOLUTE else JointModel.prismatic(u, s, model.rotation_offset)
    poses = [RigidTransform(ref_R[i], ref_t[i]) if ok[i] else None for i in range(N)]
    rep = RefineReport(trace[0], F, trace, kbest)
    if logits is not None:
        rep.weights = 0.5 * (1.0 + np.tanh(0.5 * logits))
    return out, rep, poses


def reconstruct_relative(model: JointModel) -> tuple[np.ndarray, np.ndarray]:
    return joint_transforms(model)
