"""Robust rigid registration between two snapshots of tracked points.

RANSAC over 3-point minimal samples gives a hypothesis that is polished with
Tukey-biweight IRLS. :func:`em_refine` alternates nearest-motion labelling
with per-class robust refits for a two-motion scene.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError
from .geometry import TUKEY_C, RobustLoss, fit_rigid, fit_rigid_batch, is_collinear, project_so3

MAD_TO_SIGMA = 1.4826
SCALE_FLOOR = 1e-9  # meters; residual scale used when the data are noise-free


def residuals(src: np.ndarray, dst: np.ndarray, R: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.linalg.norm(src @ R.T + t - dst, axis=1)


def _check_class(src: np.ndarray, what: str = "class") -> None:
    if len(src) < 3:
        raise DegenerateInputError(f"{what} has {len(src)} points; registration needs at least 3")
    if is_collinear(src):
        raise DegenerateInputError(f"{what} points are collinear")


def _sample_triplets(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.integers(0, n, k)
    b = rng.integers(0, n - 1, k)
    b = b + (b >= a)
    c = rng.integers(0, n - 2, k)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    c = c + (c >= lo)
    c = c + (c >= hi)
    return np.stack([a, b, c], axis=1)


def ransac_rigid(src, dst, threshold: float, iters: int, rng: np.random.Generator):
    """MSAC-scored RANSAC. Returns ``(R, t, inlier_mask)``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    _check_class(src)
    n = len(src)
    if n == 3:
        idx = np.array([[0, 1, 2]])
    else:
        idx = _sample_triplets(n, iters, rng)
    S, D = src[idx], dst[idx]
    area = np.linalg.norm(np.cross(S[:, 1] - S[:, 0], S[:, 2] - S[:, 0]), axis=1)
    ok = area > 1e-12
    if not ok.any():
        idx = np.array([[0, 1, 2]])
        S, D, ok = src[idx], dst[idx], np.array([True])
    Rb, tb = fit_rigid_batch(S, D)
    # (k, n) residuals; truncated quadratic score
    res = np.linalg.norm(np.einsum("kij,nj->kni", Rb, src) + tb[:, None, :] - dst[None], axis=2)
    score = np.minimum(res * res, threshold * threshold).sum(axis=1)
    score[~ok] = np.inf
    best = int(np.argmin(score))
    inl = res[best] <= threshold
    R, t = Rb[best], tb[best]
    if np.count_nonzero(inl) >= 3 and not is_collinear(src[inl]):
        R, t = fit_rigid(src[inl], dst[inl])
        inl = residuals(src, dst, R, t) <= threshold
    return R, t, inl


def robust_scale(r: np.ndarray) -> float:
    return max(MAD_TO_SIGMA * float(np.median(r)), SCALE_FLOOR)


def tukey_irls(src, dst, R, t, loss: RobustLoss | None = None, iters: int = 20, tol: float = 1e-12):
    """Tukey-weighted refinement from ``(R, t)``.

    With ``loss=None`` the scale is re-estimated from the residual median each
    round; with a fixed ``loss`` every round is a majorize-minimize step, so
    the robust objective never increases.
    """
    fixed = loss is not None
    obj = None
    for _ in range(iters):
        r = residuals(src, dst, R, t)
        cur = loss if fixed else RobustLoss.tukey(TUKEY_C * robust_scale(r))
        if fixed:
            val = float(cur.value(r).sum())
            if obj is not None and val > obj:
                break
            obj = val
        w = cur.weight(r)
        if np.count_nonzero(w > 0) < 3 or is_collinear(src[w > 0]):
            break
        R_new, t_new = fit_rigid(src, dst, w)
        if fixed and float(cur.value(residuals(src, dst, R_new, t_new)).sum()) > val:
            break
        step = np.linalg.norm(R_new - R) + np.linalg.norm(t_new - t)
        R, t = R_new, t_new
        if step < tol:
            break
    return R, t


def robust_register(src, dst, threshold: float = 0.02, iters: int = 200, rng=None):
    """RANSAC hypothesis followed by Tukey IRLS. Returns ``(R, t)``."""
    rng = np.random.default_rng(0) if rng is None else rng
    R, t, inl = ransac_rigid(src, dst, threshold, iters, rng)
    return tukey_irls(np.asarray(src, float), np.asarray(dst, float), R, t)


def init_pair_transforms(x_t, x_tx, labels, threshold: float = 0.02, iters: int = 200, rng=None):
    """One robust registration per label class. Returns ``(T0, T1)`` as ``(R, t)`` tuples."""
    x_t = np.asarray(x_t, dtype=float)
    x_tx = np.asarray(x_tx, dtype=float)
    labels = np.asarray(labels).astype(bool)
    rng = np.random.default_rng(0) if rng is None else rng
    out = []
    for k, sel in enumerate((~labels, labels)):
        _check_class(x_t[sel], f"part {k}")
        out.append(robust_register(x_t[sel], x_tx[sel], threshold, iters, rng))
    return out[0], out[1]


@dataclass
class EMResult:
    T0: tuple
    T1: tuple
    labels: np.ndarray
    changes: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    stopped_on_empty: bool = False


def _objective(loss, r0, r1, labels):
    return float(np.where(labels, loss.value(r1), loss.value(r0)).sum())


def em_refine(x_t, x_tx, T0, T1, labels, rounds: int = 5, scale: float | None = None) -> EMResult:
    """Hard-assignment EM over two rigid motions.

    The Tukey scale is fixed for the whole run (from the initial best-motion
    residuals unless given), so E-steps and M-steps both decrease the same
    objective.
    """
    x_t = np.asarray(x_t, dtype=float)
    x_tx = np.asarray(x_tx, dtype=float)
    labels = np.asarray(labels).astype(bool).copy()
    (R0, t0), (R1, t1) = T0, T1
    r0 = residuals(x_t, x_tx, R0, t0)
    r1 = residuals(x_t, x_tx, R1, t1)
    if scale is None:
        scale = robust_scale(np.minimum(r0, r1))
    loss = RobustLoss.tukey(TUKEY_C * scale)
    out = EMResult((R0, t0), (R1, t1), labels)
    out.objective.append(_objective(loss, r0, r1, labels))
    for _ in range(rounds):
        # ties keep the current label
        new = np.where(r1 < r0, True, np.where(r0 < r1, False, labels))
        changes = int(np.count_nonzero(new != labels))
        out.changes.append(changes)
        degenerate = False
        for sel in (~new, new):
            if np.count_nonzero(sel) < 3 or is_collinear(x_t[sel]):
                degenerate = True
        if degenerate:
            out.stopped_on_empty = True
            break
        labels = new
        R0, t0 = tukey_irls(x_t[~labels], x_tx[~labels], R0, t0, loss, iters=10)
        R1, t1 = tukey_irls(x_t[labels], x_tx[labels], R1, t1, loss, iters=10)
        R0, R1 = project_so3(R0), project_so3(R1)
        r0 = residuals(x_t, x_tx, R0, t0)
        r1 = residuals(x_t, x_tx, R1, t1)
        out.objective.append(_objective(loss, r0, r1, labels))
        if changes == 0:
            break
    out.T0, out.T1, out.labels = (R0, t0), (R1, t1), labels
    return out


def split_by_motion(x_t, x_tx, threshold: float = 0.02, iters: int = 200, rng=None):
    """Sequential RANSAC when no usable labels exist.

    Returns ``(T0, T1, labels, single_part)``; the dominant motion becomes
    part 0. ``single_part`` is set when no second motion is supported.
    """
    x_t = np.asarray(x_t, dtype=float)
    x_tx = np.asarray(x_tx, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    R0, t0, inl = ransac_rigid(x_t, x_tx, threshold, iters, rng)
    R0, t0 = tukey_irls(x_t, x_tx, R0, t0)
    rest = ~inl
    if np.count_nonzero(rest) < 3 or is_collinear(x_t[rest]):
        return (R0, t0), (R0, t0), np.zeros(len(x_t), dtype=bool), True
    R1, t1, _ = ransac_rigid(x_t[rest], x_tx[rest], threshold, iters, rng)
    R1, t1 = tukey_irls(x_t[rest], x_tx[rest], R1, t1)
    r0 = residuals(x_t, x_tx, R0, t0)
    r1 = residuals(x_t, x_tx, R1, t1)
    labels = r1 < r0
    if np.count_nonzero(labels) < 3 or np.count_nonzero(~labels) < 3:
        return (R0, t0), (R0, t0), np.zeros(len(x_t), dtype=bool), True
    return (R0, t0), (R1, t1), labels, False
