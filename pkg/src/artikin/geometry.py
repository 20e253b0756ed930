"""SO(3)/SE(3) primitives and robust losses.

Rotations are plain 3x3 float arrays. Increments for first-order solvers
live in the tangent space as rotation vectors and are applied on the left,
``R <- exp(dw) @ R``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError

ORTHO_TOL = 1e-9
_SMALL_ANGLE = 1e-10


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise DegenerateInputError("cannot normalize a zero or non-finite vector")
    return v / n


def project_so3(M: np.ndarray) -> np.ndarray:
    """Closest rotation to ``M`` in Frobenius norm.

    Rank-2 inputs still have a unique answer (the determinant fixes the last
    column); rank-1 and zero inputs do not and raise.
    """
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3) or not np.all(np.isfinite(M)):
        raise DegenerateInputError("project_so3 needs a finite 3x3 matrix")
    U, s, Vt = np.linalg.svd(M)
    if s[0] == 0.0 or s[1] <= 1e-12 * s[0]:
        raise DegenerateInputError(f"matrix too close to rank <= 1 (singular values {s})")
    d = np.sign(np.linalg.det(U @ Vt))
    if d == 0.0:
        d = 1.0
    return (U * np.array([1.0, 1.0, d])) @ Vt


def project_so3_batch(M: np.ndarray) -> np.ndarray:
    """Vectorized :func:`project_so3` over a ``(..., 3, 3)`` stack, no checks."""
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    d[d == 0] = 1.0
    U = U.copy()
    U[..., :, 2] *= d[..., None]
    return U @ Vt


def rotation_angle(R: np.ndarray) -> float:
    return float(rotation_angles(np.asarray(R, dtype=float)))


def rotation_angles(R: np.ndarray) -> np.ndarray:
    """Angle in [0, pi]; atan2 of the skew and trace parts stays accurate near 0."""
    R = np.asarray(R, dtype=float)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    v = np.stack([R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], axis=-1)
    s = 0.5 * np.linalg.norm(v, axis=-1)
    return np.arctan2(s, np.clip(c, -1.0, 1.0))


def axis_angle_rotation(u: np.ndarray, theta: float) -> np.ndarray:
    """Rodrigues' formula. ``u`` is assumed unit length."""
    u = np.asarray(u, dtype=float)
    K = skew(u)
    s, c = np.sin(theta), np.cos(theta)
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def axis_angle_rotations(u: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Stack of rotations about one axis, shape ``(len(thetas), 3, 3)``."""
    K = skew(u)
    K2 = K @ K
    th = np.asarray(thetas, dtype=float)[:, None, None]
    return np.eye(3) + np.sin(th) * K + (1.0 - np.cos(th)) * K2


def so3_exp(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    if theta < _SMALL_ANGLE:
        K = skew(w)
        return np.eye(3) + K + 0.5 * (K @ K)
    return axis_angle_rotation(w / theta, theta)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R``; handles angles near pi via the symmetric part."""
    theta = rotation_angle(R)
    if theta < 1e-7:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if np.pi - theta < 1e-6:
        B = 0.5 * (R + R.T) - np.eye(3) * np.cos(theta)
        B /= 1.0 - np.cos(theta)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        sgn = np.sign(axis @ np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]))
        return theta * axis * (sgn if sgn != 0 else 1.0)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / (2.0 * np.sin(theta)) * v


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3): ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if np.linalg.norm(R.T @ R - np.eye(3)) >= ORTHO_TOL or abs(np.linalg.det(R) - 1.0) >= ORTHO_TOL:
            raise DegenerateInputError("rotation is not in SO(3) to 1e-9")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M: np.ndarray, project: bool = False) -> RigidTransform:
        M = np.asarray(M, dtype=float)
        R = M[:3, :3]
        if project:
            R = project_so3(R)
        return cls(R, M[:3, 3])

    @classmethod
    def from_record(cls, rec) -> RigidTransform:
        """Row-major 3x4 record (12 numbers, or 3 rows of 4)."""
        M = np.asarray(rec, dtype=float).reshape(3, 4)
        R = M[:, :3]
        if np.linalg.norm(R.T @ R - np.eye(3)) >= ORTHO_TOL or abs(np.linalg.det(R) - 1.0) >= ORTHO_TOL:
            R = project_so3(R)
        return cls(R, M[:, 3])

    def to_record(self) -> list[float]:
        return [float(v) for v in np.hstack([self.rotation, self.translation[:, None]]).ravel()]

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self ∘ other`` (apply ``other`` first)."""
        return RigidTransform(
            project_so3(self.rotation @ other.rotation),
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> RigidTransform:
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Act on a point (3,) or a stack of points (..., 3)."""
        x = np.asarray(x, dtype=float)
        return x @ self.rotation.T + self.translation

    def angle(self) -> float:
        return rotation_angle(self.rotation)

    def is_close(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def __repr__(self) -> str:
        return f"RigidTransform(angle={np.degrees(self.angle()):.4f}deg, t={np.round(self.translation, 6).tolist()})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def invert(a: RigidTransform) -> RigidTransform:
    return a.inverse()


def apply(a: RigidTransform, x: np.ndarray) -> np.ndarray:
    return a.apply(x)


def fit_rigid(src: np.ndarray, dst: np.ndarray, weights: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Weighted least-squares rigid fit (Kabsch), returns ``(R, t)`` with ``dst ≈ R src + t``."""
    if weights is None:
        weights = np.ones(len(src))
    wsum = weights.sum()
    if wsum <= 0:
        raise DegenerateInputError("all registration weights are zero")
    ws = weights / wsum
    cs = ws @ src
    cd = ws @ dst
    H = ((src - cs) * ws[:, None]).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = (Vt.T * np.array([1.0, 1.0, d])) @ U.T
    return R, cd - R @ cs


def fit_rigid_batch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unweighted Kabsch over a batch of correspondence sets ``(B, k, 3)``."""
    cs = src.mean(axis=1, keepdims=True)
    cd = dst.mean(axis=1, keepdims=True)
    H = np.swapaxes(src - cs, 1, 2) @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    Ut = np.swapaxes(U, 1, 2)
    d = np.sign(np.linalg.det(V @ Ut))
    d[d == 0] = 1.0
    V = V.copy()
    V[:, :, 2] *= d[:, None]
    R = V @ Ut
    t = cd[:, 0, :] - np.einsum("bij,bj->bi", R, cs[:, 0, :])
    return R, t


def is_collinear(points: np.ndarray, rel_tol: float = 1e-6) -> bool:
    """True when the points do not span a plane (fewer than 3, or rank < 2)."""
    if len(points) < 3:
        return True
    s = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    return bool(s[0] == 0.0 or s[1] <= rel_tol * s[0])


# -- robust losses -----------------------------------------------------------

HUBER_DELTA = 1.0
TUKEY_C = 4.685


@dataclass(frozen=True)
class RobustLoss:
    """Huber (``param`` = delta) or Tukey biweight (``param`` = c)."""

    kind: str = "huber"
    param: float = HUBER_DELTA

    def __post_init__(self):
        if self.kind not in ("huber", "tukey"):
            raise ValueError(f"unknown robust loss {self.kind!r}; expected 'huber' or 'tukey'")
        if not self.param > 0:
            raise ValueError("robust loss parameter must be > 0")

    @classmethod
    def huber(cls, delta: float = HUBER_DELTA) -> RobustLoss:
        return cls("huber", delta)

    @classmethod
    def tukey(cls, c: float = TUKEY_C) -> RobustLoss:
        return cls("tukey", c)

    def __call__(self, r):
        return self.value(r)

    def value(self, r):
        a = np.abs(r)
        p = self.param
        if self.kind == "huber":
            return np.where(a <= p, 0.5 * a * a, p * (a - 0.5 * p))
        z = np.minimum(a / p, 1.0)
        return (p * p / 6.0) * (1.0 - (1.0 - z * z) ** 3)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        p = self.param
        if self.kind == "huber":
            return np.clip(r, -p, p)
        z = r / p
        return np.where(np.abs(z) < 1.0, r * (1.0 - z * z) ** 2, 0.0)

    def weight(self, r):
        """IRLS weight ``psi(r)/r`` (1 at r=0)."""
        a = np.abs(np.asarray(r, dtype=float))
        p = self.param
        if self.kind == "huber":
            return np.where(a <= p, 1.0, p / np.maximum(a, 1e-300))
        z = a / p
        return np.where(z < 1.0, (1.0 - z * z) ** 2, 0.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "param": self.param}


def robust_loss(r, kind: RobustLoss):
    return kind.value(r)
