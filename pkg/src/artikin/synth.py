"""Seeded synthetic two-part scenes with free object motion.

Parts are point samples on simple shapes in an object frame where the joint
is defined. Per frame the object pose ``W_i`` follows a random walk on SE(3);
part 0 sits at ``E_i^0 = W_i`` (or ``W_i J(-s_i/2)`` for symmetric scenes)
and part 1 at ``E_i^1 = E_i^0 J(s_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SpecError
from .geometry import RigidTransform, so3_exp
from .kinematics import PRISMATIC, REVOLUTE, GroundTruth, JointModel, joint_transform
from .tracks import SceneDataset, TrackSet

SHAPES = ("box", "cylinder", "thin-blade")


@dataclass(frozen=True)
class PartShape:
    kind: str
    dims: tuple  # box/thin-blade: (lx, ly, lz); cylinder: (radius, height)
    center: tuple = (0.0, 0.0, 0.0)
    yaw_deg: float = 0.0  # rotation about the object z axis

    def __post_init__(self):
        if self.kind not in SHAPES:
            raise SpecError(f"unknown part shape {self.kind!r}; expected one of {SHAPES}")


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    dropout: float = 0.0
    outlier_rate: float = 0.0
    outlier_magnitude: float = 0.1

    def __post_init__(self):
        if self.sigma < 0 or self.outlier_magnitude < 0:
            raise SpecError("noise sigma and outlier magnitude must be >= 0")
        if not (0 <= self.dropout <= 1 and 0 <= self.outlier_rate <= 1):
            raise SpecError("dropout and outlier rates must lie in [0, 1]")


@dataclass(frozen=True)
class FeatureSpec:
    dim: int = 8
    separation: float = 12.0  # distance between cluster centers, in noise sigmas
    sigma: float = 1.0


@dataclass(frozen=True)
class MotionSpec:
    sigma_rot_deg: float = 2.0
    sigma_trans: float = 0.01
    depth: float = 0.8
    static_base: bool = False


@dataclass(frozen=True)
class SceneSpec:
    joint: JointModel  # object frame, states per frame
    part_counts: tuple = (200, 200)
    shapes: tuple = (PartShape("box", (0.2, 0.2, 0.05)), PartShape("box", (0.2, 0.05, 0.2)))
    object_poses: tuple | None = None
    motion: MotionSpec = MotionSpec()
    symmetric: bool = False
    noise: NoiseSpec = NoiseSpec()
    features: FeatureSpec | None = FeatureSpec()
    seed: int = 0
    name: str = "custom"

    @property
    def frame_count(self) -> int:
        return self.joint.frame_count

    def with_noise(self, **kw) -> SceneSpec:
        return replace(self, noise=replace(self.noise, **kw))

    def validate(self) -> None:
        N = self.frame_count
        if N < 2:
            raise SpecError("a scene needs at least 2 frames")
        if len(self.part_counts) != 2 or len(self.shapes) != 2:
            raise SpecError("part_counts and shapes must both have length 2")
        if min(self.part_counts) < 3:
            raise SpecError("each part needs at least 3 points")
        if self.object_poses is not None and len(self.object_poses) != N:
            raise SpecError(f"object_poses has {len(self.object_poses)} entries but the joint has {N} states")


def _rotz(deg: float) -> np.ndarray:
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def sample_shape(shape: PartShape, n: int, rng: np.random.Generator) -> np.ndarray:
    """Points on the surface of the shape (what a depth sensor would see)."""
    if shape.kind in ("box", "thin-blade"):
        L = np.asarray(shape.dims, dtype=float)
        areas = np.array([L[1] * L[2], L[0] * L[2], L[0] * L[1]])
        face_axis = rng.choice(3, size=n, p=areas / areas.sum())
        u = rng.uniform(-0.5, 0.5, (n, 3))
        side = rng.choice([-0.5, 0.5], size=n)
        u[np.arange(n), face_axis] = side
        pts = u * L
    else:
        r, h = shape.dims
        theta = rng.uniform(0, 2 * np.pi, n)
        z = rng.uniform(-h / 2, h / 2, n)
        pts = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    return pts @ _rotz(shape.yaw_deg).T + np.asarray(shape.center, dtype=float)


def random_walk(n: int, motion: MotionSpec, rng: np.random.Generator) -> list[RigidTransform]:
    """Body-frame Gaussian increments on SE(3), starting in front of the camera."""
    R = so3_exp(rng.normal(0.0, 0.5, 3))
    T = RigidTransform(R, np.array([0.0, 0.0, motion.depth]))
    out = [T]
    for _ in range(n - 1):
        if motion.static_base:
            out.append(T)
            continue
        w = rng.normal(0.0, np.radians(motion.sigma_rot_deg), 3)
        v = rng.normal(0.0, motion.sigma_trans, 3)
        T = T @ RigidTransform(so3_exp(w), v)
        out.append(T)
    return out


def canonical_joint(joint: JointModel, E00: RigidTransform) -> JointModel:
    """Express an object-frame joint in camera frame 0, part 0 as reference."""
    axis = E00.rotation @ joint.axis
    if joint.kind == REVOLUTE:
        return JointModel.revolute(axis, E00.apply(joint.pivot), joint.states)
    return JointModel.prismatic(axis, joint.states)


def generate_scene(spec: SceneSpec) -> SceneDataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    N = spec.frame_count
    P0, P1 = spec.part_counts
    x = np.vstack([sample_shape(spec.shapes[0], P0, rng), sample_shape(spec.shapes[1], P1, rng)])
    labels = np.r_[np.zeros(P0, dtype=int), np.ones(P1, dtype=int)]
    W = list(spec.object_poses) if spec.object_poses is not None else random_walk(N, spec.motion, rng)

    J = spec.joint
    poses = []
    for i in range(N):
        if spec.symmetric:
            half = J.with_states(np.r_[0.0, -0.5 * J.states[i]])
            E0 = W[i] @ joint_transform(half, 1)
        else:
            E0 = W[i]
        poses.append([E0, E0 @ joint_transform(J, i)])

    clean = np.empty((N, P0 + P1, 3))
    for i in range(N):
        for k in (0, 1):
            sel = labels == k
            clean[i, sel] = poses[i][k].apply(x[sel])

    nz = spec.noise
    P = P0 + P1
    pos = clean + rng.normal(0.0, nz.sigma, clean.shape) if nz.sigma > 0 else clean.copy()
    visibility = np.ones((N, P))
    injections = []
    if nz.dropout > 0:
        drop = rng.random((N, P)) < nz.dropout
        visibility[drop] = 0.2
        injections += [{"kind": "dropout", "frame": int(i), "point": int(p)} for i, p in np.argwhere(drop)]
    if nz.outlier_rate > 0:
        out = rng.random((N, P)) < nz.outlier_rate
        idx = np.argwhere(out)
        dirs = rng.normal(size=(len(idx), 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        offs = dirs * nz.outlier_magnitude
        pos[out] += offs
        injections += [
            {"kind": "outlier", "frame": int(i), "point": int(p), "offset": [float(v) for v in o]}
            for (i, p), o in zip(idx, offs)
        ]

    feats = None
    if spec.features is not None:
        fs = spec.features
        if fs.dim < 2:
            raise SpecError("feature dimension must be >= 2 for two orthogonal cluster centers")
        C = np.zeros((2, fs.dim))
        m = fs.separation * fs.sigma / np.sqrt(2.0)
        C[0, 0] = m
        C[1, 1] = m
        feats = C[labels] + rng.normal(0.0, fs.sigma, (P, fs.dim))

    tracks = TrackSet(pos, visibility, np.ones((N, P), dtype=bool), feats)
    gt = GroundTruth(
        labels=labels,
        poses=poses,
        joint=canonical_joint(J, poses[0][0]),
        canonical_points=clean[0].copy(),
        injections=injections,
    )
    return SceneDataset(tracks, gt, {"name": spec.name, "seed": spec.seed})


# -- presets -------------------------------------------------------------------


def smooth_ramp(n: int, end: float) -> np.ndarray:
    return end * 0.5 * (1.0 - np.cos(np.pi * np.arange(n) / (n - 1)))


def _laptop(n):
    joint = JointModel.revolute([1.0, 0.0, 0.0], [0.0, 0.11, 0.01], smooth_ramp(n, np.radians(90)))
    shapes = (PartShape("box", (0.30, 0.22, 0.02)), PartShape("thin-blade", (0.30, 0.01, 0.20), (0.0, 0.11, 0.11)))
    return dict(joint=joint, shapes=shapes, part_counts=(220, 200))


def _scissors(n):
    joint = JointModel.revolute([0.0, 0.0, 1.0], [0.0, 0.0, 0.0], smooth_ramp(n, np.radians(50)))
    shapes = (
        PartShape("thin-blade", (0.18, 0.025, 0.004), (0.04, 0.0, -0.003), yaw_deg=8.0),
        PartShape("thin-blade", (0.18, 0.025, 0.004), (0.04, 0.0, 0.003), yaw_deg=-8.0),
    )
    return dict(joint=joint, shapes=shapes, part_counts=(180, 180), symmetric=True)


def _drawer(n):
    joint = JointModel.prismatic([0.0, 1.0, 0.0], smooth_ramp(n, 0.12))
    shapes = (PartShape("box", (0.40, 0.40, 0.30)), PartShape("box", (0.34, 0.12, 0.12), (0.0, 0.26, 0.0)))
    return dict(joint=joint, shapes=shapes, part_counts=(250, 180))


def _usb(n):
    joint = JointModel.revolute([0.0, 0.0, 1.0], [0.03, 0.0, 0.0], smooth_ramp(n, np.radians(100)))
    shapes = (
        PartShape("thin-blade", (0.06, 0.022, 0.01)),
        PartShape("thin-blade", (0.06, 0.024, 0.003), (0.0, 0.0, 0.008)),
    )
    return dict(joint=joint, shapes=shapes, part_counts=(160, 150))


PRESETS = {"laptop-like": _laptop, "scissors-like": _scissors, "drawer-like": _drawer, "usb-like": _usb}


def preset(name: str, seed: int = 0, frames: int = 60, noise: NoiseSpec | None = None) -> SceneSpec:
    """Fixed scene recipes.

    laptop-like: revolute lid 0 to 90 deg on a box base.
    scissors-like: two thin blades opening 0 to 50 deg, both moving symmetrically.
    drawer-like: prismatic drawer sliding 0 to 12 cm out of a cabinet.
    usb-like: small swivel blade turning 0 to 100 deg.
    """
    if name not in PRESETS:
        raise SpecError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    kw = PRESETS[name](frames)
    return SceneSpec(seed=seed, name=name, noise=noise or NoiseSpec(), **kw)


def benchmark_noise() -> NoiseSpec:
    """2 mm jitter, 2% outliers, 5% dropout."""
    return NoiseSpec(sigma=0.002, dropout=0.05, outlier_rate=0.02, outlier_magnitude=0.1)


def _sub(cls, d, where: str):
    import dataclasses

    if d is None:
        return None
    if not isinstance(d, dict):
        raise SpecError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    bad = sorted(set(d) - names)
    if bad:
        raise SpecError(f"{where}: unknown field(s) {bad}; allowed: {sorted(names)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"{where}: {exc}") from None


SPEC_KEYS = {"preset", "seed", "frames", "noise", "features", "motion", "symmetric", "part_counts", "shapes", "joint", "name"}


def spec_from_dict(d: dict) -> SceneSpec:
    """Scene spec from JSON: a preset with overrides, or a fully custom scene.

    A custom ``joint`` is ``{"kind", "axis", "pivot"?, "end", "frames"?}``
    with states ramping smoothly from 0 to ``end``, or explicit ``"states"``.
    """
    if not isinstance(d, dict):
        raise SpecError("spec: expected a JSON object")
    bad = sorted(set(d) - SPEC_KEYS)
    if bad:
        raise SpecError(f"spec: unknown field(s) {bad}; allowed: {sorted(SPEC_KEYS)}")
    frames = d.get("frames", 60)
    if not isinstance(frames, int) or frames < 2:
        raise SpecError("spec.frames: expected an integer >= 2")
    seed = d.get("seed", 0)
    if not isinstance(seed, int):
        raise SpecError("spec.seed: expected an integer")
    if "preset" in d:
        spec = preset(d["preset"], seed=seed, frames=frames)
    else:
        if "joint" not in d:
            raise SpecError("spec.joint: required when no preset is given")
        spec = SceneSpec(joint=JointModel.prismatic([1, 0, 0], np.zeros(frames)), seed=seed)
    kw = {}
    if "joint" in d:
        j = d["joint"]
        if not isinstance(j, dict):
            raise SpecError("spec.joint: expected an object")
        try:
            kind = j["kind"]
            states = np.asarray(j["states"], dtype=float) if "states" in j else smooth_ramp(frames, float(j["end"]))
            if kind == REVOLUTE:
                kw["joint"] = JointModel.revolute(j["axis"], j.get("pivot", [0, 0, 0]), states)
            elif kind == PRISMATIC:
                kw["joint"] = JointModel.prismatic(j["axis"], states)
            else:
                raise SpecError(f"spec.joint.kind: expected 'revolute' or 'prismatic', got {kind!r}")
        except KeyError as exc:
            raise SpecError(f"spec.joint: missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise SpecError(f"spec.joint: {exc}") from None
    if "shapes" in d:
        if not isinstance(d["shapes"], list):
            raise SpecError("spec.shapes: expected a list of 2 shapes")
        shapes = []
        for k, sh in enumerate(d["shapes"]):
            s = _sub(PartShape, sh, f"spec.shapes[{k}]")
            shapes.append(replace(s, dims=tuple(s.dims), center=tuple(s.center)))
        kw["shapes"] = tuple(shapes)
    if "part_counts" in d:
        kw["part_counts"] = tuple(int(v) for v in d["part_counts"])
    if "noise" in d:
        kw["noise"] = _sub(NoiseSpec, d["noise"], "spec.noise")
    if "features" in d:
        kw["features"] = _sub(FeatureSpec, d["features"], "spec.features")
    if "motion" in d:
        kw["motion"] = _sub(MotionSpec, d["motion"], "spec.motion")
    for key in ("symmetric", "name"):
        if key in d:
            kw[key] = d[key]
    spec = replace(spec, **kw)
    spec.validate()
    return spec
