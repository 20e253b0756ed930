"""Joint model, its closed-form transform, and ground-truth containers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError
from .geometry import RigidTransform, axis_angle_rotation, axis_angle_rotations, unit

REVOLUTE = "revolute"
PRISMATIC = "prismatic"
JOINT_KINDS = (REVOLUTE, PRISMATIC)


@dataclass(frozen=True, eq=False)
class JointModel:
    """Revolute ``{axis, pivot, angles}`` or prismatic ``{axis, displacements}``.

    States are relative to frame 0 (``states[0] == 0``). The revolute pivot is
    the point of the axis line closest to the origin, so ``axis @ pivot == 0``.
    Use :meth:`revolute` / :meth:`prismatic` to build one from loose inputs.
    """

    kind: str
    axis: np.ndarray
    states: np.ndarray
    pivot: np.ndarray | None = None
    rotation_offset: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in JOINT_KINDS:
            raise ValueError(f"joint kind must be one of {JOINT_KINDS}, got {self.kind!r}")
        axis = np.array(self.axis, dtype=float).reshape(3)
        states = np.array(self.states, dtype=float).reshape(-1)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise ValueError("joint axis must be unit length")
        if len(states) == 0 or abs(states[0]) > 1e-12:
            raise ValueError("joint states must start at 0")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "states", states)
        if self.kind == REVOLUTE:
            if self.pivot is None:
                raise ValueError("revolute joint needs a pivot")
            pivot = np.array(self.pivot, dtype=float).reshape(3)
            if abs(axis @ pivot) > 1e-9:
                raise ValueError("revolute pivot must satisfy axis @ pivot == 0")
            object.__setattr__(self, "pivot", pivot)
        else:
            object.__setattr__(self, "pivot", None)
        if self.rotation_offset is not None:
            object.__setattr__(self, "rotation_offset", np.array(self.rotation_offset, dtype=float).reshape(3, 3))

    @classmethod
    def revolute(cls, axis, pivot, states) -> JointModel:
        u = unit(axis)
        p = np.asarray(pivot, dtype=float)
        p = p - (u @ p) * u
        s = np.asarray(states, dtype=float)
        return cls(REVOLUTE, u, s - s[0], pivot=p)

    @classmethod
    def prismatic(cls, axis, states, rotation_offset=None) -> JointModel:
        s = np.asarray(states, dtype=float)
        return cls(PRISMATIC, unit(axis), s - s[0], rotation_offset=rotation_offset)

    @property
    def frame_count(self) -> int:
        return len(self.states)

    def with_states(self, states) -> JointModel:
        if self.kind == REVOLUTE:
            return JointModel.revolute(self.axis, self.pivot, states)
        return JointModel.prismatic(self.axis, states, self.rotation_offset)

    def flipped(self) -> JointModel:
        """Same physical joint with the axis reversed (states change sign)."""
        if self.kind == REVOLUTE:
            return JointModel(REVOLUTE, -self.axis, -self.states, pivot=self.pivot)
        return JointModel(PRISMATIC, -self.axis, -self.states, rotation_offset=self.rotation_offset)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "axis": [float(v) for v in self.axis],
            "pivot": None if self.pivot is None else [float(v) for v in self.pivot],
            "states": [float(v) for v in self.states],
        }

    @classmethod
    def from_dict(cls, d: dict, where: str = "joint") -> JointModel:
        try:
            kind = d["kind"]
            axis = d["axis"]
            states = d["states"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"{where}: missing field {exc}") from None
        if kind not in JOINT_KINDS:
            raise SchemaError(f"{where}.kind: expected one of {JOINT_KINDS}, got {kind!r}")
        try:
            if kind == REVOLUTE:
                if d.get("pivot") is None:
                    raise SchemaError(f"{where}.pivot: required for revolute joints")
                pivot = d["pivot"]
            else:
                pivot = None
            try:
                # stored values already satisfy the invariants; keep them bit-exact
                return cls(kind, axis, states, pivot=pivot)
            except ValueError:
                pass
            if kind == REVOLUTE:
                return cls.revolute(axis, pivot, states)
            return cls.prismatic(axis, states)
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"{where}: {exc}") from None


def joint_transform(model: JointModel, i: int) -> RigidTransform:
    """``[R(u, θ_i) | (I - R) o]`` for revolute, ``[I | d_i u]`` for prismatic."""
    s = model.states[i]
    if model.kind == REVOLUTE:
        R = axis_angle_rotation(model.axis, s)
        return RigidTransform(R, (np.eye(3) - R) @ model.pivot)
    return RigidTransform(np.eye(3), s * model.axis)


def joint_transforms(model: JointModel, states=None) -> tuple[np.ndarray, np.ndarray]:
    """All frames at once as ``(R (N,3,3), t (N,3))``."""
    s = model.states if states is None else np.asarray(states, dtype=float)
    if model.kind == REVOLUTE:
        R = axis_angle_rotations(model.axis, s)
        t = model.pivot - R @ model.pivot
        return R, t
    R = np.broadcast_to(np.eye(3), (len(s), 3, 3)).copy()
    return R, s[:, None] * model.axis


@dataclass(eq=False)
class GroundTruth:
    """Evaluation targets for a synthetic scene.

    ``poses[i][k]`` maps part ``k``'s points from the object frame into camera
    frame ``i``. ``joint`` is expressed in the canonical frame (camera frame 0)
    with part 0 as the reference. ``canonical_points`` are the noise-free
    frame-0 positions.
    """

    labels: np.ndarray
    poses: list
    joint: JointModel
    canonical_points: np.ndarray | None = None
    injections: list = field(default_factory=list)

    @property
    def states(self) -> np.ndarray:
        return self.joint.states

    def calibrated_poses(self) -> list:
        """``E_i^k ∘ (E_0^k)^-1`` for each part; identity at frame 0."""
        A = [self.poses[0][k].inverse() for k in (0, 1)]
        return [[self.poses[i][k] @ A[k] for k in (0, 1)] for i in range(len(self.poses))]

    def to_dict(self) -> dict:
        d = {
            "labels": [int(v) for v in self.labels],
            "poses": [[p.to_record() for p in frame] for frame in self.poses],
            "joint": self.joint.to_dict(),
            "injections": list(self.injections),
        }
        if self.canonical_points is not None:
            d["canonical_points"] = [[float(v) for v in row] for row in self.canonical_points]
        return d

    @classmethod
    def from_dict(cls, d: dict, where: str = "ground_truth") -> GroundTruth:
        if not isinstance(d, dict):
            raise SchemaError(f"{where}: expected an object")
        for key in ("labels", "poses", "joint"):
            if key not in d:
                raise SchemaError(f"{where}: missing field '{key}'")
        try:
            poses = [[RigidTransform.from_record(r) for r in frame] for frame in d["poses"]]
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"{where}.poses: {exc}") from None
        if any(len(frame) != 2 for frame in poses):
            raise SchemaError(f"{where}.poses: every frame needs exactly 2 part poses")
        cp = d.get("canonical_points")
        return cls(
            labels=np.asarray(d["labels"], dtype=int),
            poses=poses,
            joint=JointModel.from_dict(d["joint"], where=f"{where}.joint"),
            canonical_points=None if cp is None else np.asarray(cp, dtype=float).reshape(-1, 3),
            injections=list(d.get("injections", [])),
        )
