"""Point-track containers, depth lifting, quality filtering and bundle files.

A :class:`TrackSet` keeps every sample of every track; rejected samples are
masked out through ``valid`` rather than deleted, so point indices and frame
numbers never shift.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError, InvalidDepthError, ParseError, SchemaError
from .kinematics import GroundTruth

MIN_POINTS = 6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


@dataclass(frozen=True)
class FilterConfig:
    tau_c: float = 0.5  # visibility threshold
    tau_v: float = 2.0  # displacement threshold, in standard deviations

    def __post_init__(self):
        if not 0.0 <= self.tau_c <= 1.0:
            raise ValueError("tau_c must lie in [0, 1]")
        if not self.tau_v > 0:
            raise ValueError("tau_v must be > 0")


@dataclass(frozen=True)
class TrackedPoint:
    id: int
    positions: np.ndarray
    visibility: np.ndarray
    foreground: np.ndarray
    feature: np.ndarray | None


@dataclass(eq=False)
class TrackSet:
    """Dense tracks stored frame-major.

    positions:  (N, P, 3) meters, NaN where unknown
    visibility: (N, P) confidence in [0, 1]
    foreground: (N, P) bool
    features:   (P, D) one descriptor per track, or None
    valid:      (N, P) bool usable-sample mask
    """

    positions: np.ndarray
    visibility: np.ndarray
    foreground: np.ndarray
    features: np.ndarray | None = None
    ids: np.ndarray | None = None
    intrinsics: CameraIntrinsics | None = None
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise SchemaError("positions must have shape (frames, points, 3)")
        N, P, _ = self.positions.shape
        if N < 2:
            raise SchemaError("a track set needs at least 2 frames")
        self.visibility = np.asarray(self.visibility, dtype=float).reshape(N, P)
        self.foreground = np.asarray(self.foreground, dtype=bool).reshape(N, P)
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=float).reshape(P, -1)
            if self.features.shape[1] == 0:
                self.features = None
        self.ids = np.arange(P) if self.ids is None else np.asarray(self.ids, dtype=int).reshape(P)
        finite = np.all(np.isfinite(self.positions), axis=2)
        if np.any((self.visibility > 0) & ~finite):
            raise SchemaError("positions must be finite wherever visibility > 0")
        self.valid = finite if self.valid is None else np.asarray(self.valid, dtype=bool).reshape(N, P) & finite

    @property
    def frame_count(self) -> int:
        return self.positions.shape[0]

    @property
    def point_count(self) -> int:
        return self.positions.shape[1]

    def point(self, j: int) -> TrackedPoint:
        return TrackedPoint(
            id=int(self.ids[j]),
            positions=self.positions[:, j],
            visibility=self.visibility[:, j],
            foreground=self.foreground[:, j],
            feature=None if self.features is None else self.features[j],
        )

    @property
    def points(self) -> list[TrackedPoint]:
        return [self.point(j) for j in range(self.point_count)]

    def with_valid(self, valid: np.ndarray) -> TrackSet:
        return replace(self, valid=np.asarray(valid, dtype=bool))

    def frames(self, start: int, stop: int) -> TrackSet:
        """Frames ``[start, stop)`` as a new track set sharing point indexing."""
        return TrackSet(
            self.positions[start:stop], self.visibility[start:stop], self.foreground[start:stop],
            self.features, self.ids, self.intrinsics, self.valid[start:stop],
        )

    def equals(self, other: TrackSet) -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b, equal_nan=True)

        return (
            same(self.positions, other.positions)
            and same(self.visibility, other.visibility)
            and same(self.foreground, other.foreground)
            and same(self.features, other.features)
            and same(self.ids, other.ids)
            and same(self.valid, other.valid)
            and self.intrinsics == other.intrinsics
        )


@dataclass(eq=False)
class SceneDataset:
    tracks: TrackSet
    ground_truth: GroundTruth | None = None
    meta: dict = field(default_factory=dict)


# -- camera model ------------------------------------------------------------


def lift_to_3d(u: float, v: float, depth: float, K: CameraIntrinsics) -> np.ndarray:
    if not depth > 0:
        raise InvalidDepthError(f"depth must be > 0, got {depth}")
    return np.array([(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth])


def lift_many(uv: np.ndarray, depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    uv = np.asarray(uv, dtype=float)
    d = np.asarray(depth, dtype=float)
    x = (uv[..., 0] - K.cx) * d / K.fx
    y = (uv[..., 1] - K.cy) * d / K.fy
    return np.stack([x, y, d], axis=-1)


def project_to_pixel(X: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Inverse of lifting: ``(u, v, depth)``."""
    X = np.asarray(X, dtype=float)
    z = X[..., 2]
    return np.stack([X[..., 0] / z * K.fx + K.cx, X[..., 1] / z * K.fy + K.cy, z], axis=-1)


# -- filtering ---------------------------------------------------------------


def step_displacements(tracks: TrackSet) -> np.ndarray:
    """``||X[t+1] - X[t]||`` per point, shape (N-1, P); NaN if either end is unknown."""
    return np.linalg.norm(np.diff(tracks.positions, axis=0), axis=2)


def visibility_consistent(tracks: TrackSet, cfg: FilterConfig) -> np.ndarray:
    """Step set (N-1, P): visible at t and inside the foreground at t and t+1."""
    vis = tracks.visibility[:-1] > cfg.tau_c
    return vis & tracks.foreground[:-1] & tracks.foreground[1:]


def displacement_threshold(tracks: TrackSet, cfg: FilterConfig) -> tuple[float, float, float]:
    """``(mu, sigma, mu + tau_v * sigma)`` over the visibility-consistent steps."""
    S = visibility_consistent(tracks, cfg)
    d = step_displacements(tracks)
    sel = d[S & np.isfinite(d)]
    if sel.size == 0:
        raise InsufficientDataError("no visible foreground steps to compute displacement statistics")
    # sequential reduction in row-major order keeps the result schedule-independent
    mu = float(np.mean(sel))
    sigma = float(np.std(sel))
    return mu, sigma, mu + cfg.tau_v * sigma


def filter_tracks(raw: TrackSet, cfg: FilterConfig | None = None) -> TrackSet:
    """Mask out low-visibility, off-mask and jumpy samples.

    Sample ``(t, p)`` for ``t < N-1`` survives when its forward step is in the
    visibility-consistent set and moves at most ``mu + tau_v * sigma``. The
    last frame has no forward step: it needs visibility and foreground at
    ``N-1`` and a within-threshold incoming step when that step is defined.
    Statistics come from the raw visibility/foreground fields only, which makes
    the filter idempotent; the result is intersected with ``raw.valid``.
    """
    cfg = cfg or FilterConfig()
    if raw.point_count == 0:
        raise InsufficientDataError("empty track set")
    _, _, thr = displacement_threshold(raw, cfg)
    S = visibility_consistent(raw, cfg)
    d = step_displacements(raw)
    with np.errstate(invalid="ignore"):
        small = d <= thr
    keep = np.zeros_like(raw.valid)
    keep[:-1] = S & small
    last_in = np.where(np.isfinite(d[-1]), small[-1], True)
    keep[-1] = (raw.visibility[-1] > cfg.tau_c) & raw.foreground[-1] & last_in
    valid = keep & raw.valid
    surviving = int(np.count_nonzero(valid.any(axis=0)))
    if surviving < MIN_POINTS:
        raise InsufficientDataError(f"only {surviving} points survive filtering; need at least {MIN_POINTS}")
    return raw.with_valid(valid)


# -- bundle files --------------------------------------------------------------


def _require(d: dict, key: str, where: str):
    if not isinstance(d, dict):
        raise SchemaError(f"{where}: expected an object")
    if key not in d:
        raise SchemaError(f"{where}: missing field '{key}'")
    return d[key]


def _array(value, shape_tail: tuple, n: int, where: str, dtype=float) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=dtype)
    except (ValueError, TypeError):
        raise SchemaError(f"{where}: not a numeric array") from None
    if arr.shape != (n, *shape_tail):
        raise SchemaError(f"{where}: expected shape {(n, *shape_tail)}, got {arr.shape}")
    return arr


def bundle_from_dict(doc: dict) -> SceneDataset:
    N = _require(doc, "frame_count", "bundle")
    if not isinstance(N, int) or N < 2:
        raise SchemaError(f"bundle.frame_count: expected an integer >= 2, got {N!r}")
    intr = doc.get("intrinsics")
    K = None
    if intr is not None:
        try:
            K = CameraIntrinsics(**{k: float(_require(intr, k, "bundle.intrinsics")) for k in ("fx", "fy", "cx", "cy")})
        except ValueError as exc:
            raise SchemaError(f"bundle.intrinsics: {exc}") from None
    pts = _require(doc, "points", "bundle")
    if not isinstance(pts, list) or not pts:
        raise SchemaError("bundle.points: expected a non-empty list")
    P = len(pts)
    positions = np.full((N, P, 3), np.nan)
    visibility = np.zeros((N, P))
    foreground = np.zeros((N, P), dtype=bool)
    ids = np.zeros(P, dtype=int)
    feats = []
    for j, rec in enumerate(pts):
        where = f"bundle.points[{j}]"
        ids[j] = int(_require(rec, "id", where))
        visibility[:, j] = _array(_require(rec, "visibility", where), (), N, f"{where}.visibility")
        fg = _require(rec, "foreground", where)
        if not isinstance(fg, list) or not all(isinstance(b, bool) for b in fg):
            raise SchemaError(f"{where}.foreground: expected a list of booleans")
        foreground[:, j] = _array(fg, (), N, f"{where}.foreground", dtype=bool)
        has3 = "xyz" in rec
        has2 = "uv" in rec or "depth" in rec
        if has3 and has2:
            raise SchemaError(f"{where}: mixes 3D ('xyz') and 2D ('uv'/'depth') samples")
        if has3:
            positions[:, j] = _array(rec["xyz"], (3,), N, f"{where}.xyz")
        elif has2:
            if K is None:
                raise SchemaError(f"{where}: 2D tracks need bundle intrinsics")
            uv = _array(_require(rec, "uv", where), (2,), N, f"{where}.uv")
            depth = _array(_require(rec, "depth", where), (), N, f"{where}.depth")
            seen = visibility[:, j] > 0
            bad = seen & ~(depth > 0)
            if np.any(bad):
                t = int(np.flatnonzero(bad)[0])
                raise InvalidDepthError(f"{where}.depth[{t}]: depth must be > 0 where visible")
            ok = depth > 0
            positions[ok, j] = lift_many(uv[ok], depth[ok], K)
        else:
            raise SchemaError(f"{where}: needs either 'xyz' or 'uv' + 'depth'")
        feats.append(rec.get("feature"))
    features = None
    have = [f is not None and len(f) > 0 for f in feats]
    if any(have):
        if not all(have):
            raise SchemaError("bundle.points: either every point has a feature or none does")
        D = len(feats[0])
        features = np.stack([_array(f, (), D, f"bundle.points[{j}].feature") for j, f in enumerate(feats)])
    try:
        tracks = TrackSet(positions, visibility, foreground, features, ids, K)
    except SchemaError as exc:
        raise SchemaError(f"bundle: {exc}") from None
    gt = None
    if doc.get("ground_truth") is not None:
        gt = GroundTruth.from_dict(doc["ground_truth"], where="bundle.ground_truth")
        if len(gt.labels) != P or len(gt.poses) != N:
            raise SchemaError("bundle.ground_truth: label/pose counts do not match the tracks")
    return SceneDataset(tracks, gt, dict(doc.get("meta", {})))


def bundle_to_dict(ds: SceneDataset) -> dict:
    tr = ds.tracks
    pts = []
    for j in range(tr.point_count):
        rec = {"id": int(tr.ids[j])}
        if tr.features is not None:
            rec["feature"] = [float(v) for v in tr.features[j]]
        rec["visibility"] = [float(v) for v in tr.visibility[:, j]]
        rec["foreground"] = [bool(v) for v in tr.foreground[:, j]]
        rec["xyz"] = [[float(v) if np.isfinite(v) else None for v in row] for row in tr.positions[:, j]]
        pts.append(rec)
    doc = {
        "frame_count": tr.frame_count,
        "intrinsics": None if tr.intrinsics is None else tr.intrinsics.to_dict(),
        "points": pts,
    }
    if ds.ground_truth is not None:
        doc["ground_truth"] = ds.ground_truth.to_dict()
    if ds.meta:
        doc["meta"] = ds.meta
    return doc


def load_bundle(path) -> SceneDataset:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return bundle_from_dict(doc)


def save_bundle(ds: SceneDataset, path) -> None:
    Path(path).write_text(json.dumps(bundle_to_dict(ds), allow_nan=False))
