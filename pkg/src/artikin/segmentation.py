"""Two-part segmentation of point tracks by windowed soft-weight optimization.

Each window of ``n`` frames is solved pair by pair, ``(0, t)`` for
``t = 1..n-1``. A pair starts from robust registrations of both parts,
then runs Adam on a loss that mixes a normalized Huber residual, an entropy
penalty, a feature-graph smoothness term and a pull toward the propagated
initial weights. Weights live as logits: ``w = sigmoid(l)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CannotPropagateError, DegenerateInputError, NumericalFailure
from .geometry import HUBER_DELTA, RigidTransform, RobustLoss, is_collinear, project_so3, so3_exp
from .optim import Adam
from .registration import em_refine, init_pair_transforms, split_by_motion
from .tracks import TrackSet

W_HIGH = 0.95
W_LOW = 0.05
BCE_CLAMP = 1e-7
MIN_PAIR_POINTS = 6


@dataclass(frozen=True)
class SolverConfig:
    window_size: int = 8
    iters_per_pair: int = 100
    lr_transform: float = 1e-4
    lr_weights: float = 1e-2
    lambda_main: float = 200.0
    lambda_smooth: float = 10.0
    lambda_ent: float = 0.01
    lambda_init: float = 5.0
    eps: float = 1e-6
    neighbor_k: int = 16
    neighbor_radius: float = 0.3
    ransac_iters: int = 200
    ransac_inlier_threshold: float = 0.02
    em_rounds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.window_size < 2:
            raise ValueError("window_size must be >= 2")
        for name in ("lambda_main", "lambda_smooth", "lambda_ent", "lambda_init"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (self.lr_transform > 0 and self.lr_weights > 0):
            raise ValueError("learning rates must be > 0")
        if self.iters_per_pair < 0 or self.em_rounds < 0 or self.ransac_iters < 1:
            raise ValueError("iteration counts must be non-negative")
        if self.neighbor_k < 0 or self.eps <= 0:
            raise ValueError("neighbor_k must be >= 0 and eps > 0")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def logit(w):
    w = np.asarray(w, dtype=float)
    return np.log(w) - np.log1p(-w)


@dataclass(eq=False)
class PartWeightField:
    """Soft weights per frame and point, stored as logits (NaN = unknown)."""

    logits: np.ndarray

    @classmethod
    def from_weights(cls, w) -> PartWeightField:
        return cls(logit(np.clip(np.asarray(w, dtype=float), 1e-300, 1.0 - 1e-16)))

    @property
    def weights(self) -> np.ndarray:
        return sigmoid(self.logits)

    @property
    def masks(self) -> np.ndarray:
        # w >= 0.5 exactly when the logit is >= 0
        return self.logits >= 0.0


# -- feature graph and initialization -----------------------------------------


def _normalize_rows(F: np.ndarray) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    n = np.linalg.norm(F, axis=1, keepdims=True)
    return np.divide(F, n, out=np.zeros_like(F), where=n > 0)


def _features_of(obj):
    if isinstance(obj, TrackSet):
        if obj.features is None:
            raise DegenerateInputError("track set has no features")
        return obj.features
    return np.asarray(obj, dtype=float)


@dataclass(eq=False)
class NeighborGraph:
    """Undirected weighted graph stored as an edge list with ``i < j``."""

    n: int
    edges: np.ndarray  # (E, 2) int
    alpha: np.ndarray  # (E,)

    @classmethod
    def empty(cls, n: int) -> NeighborGraph:
        return cls(n, np.zeros((0, 2), dtype=int), np.zeros(0))

    def neighbors(self, p: int) -> tuple[np.ndarray, np.ndarray]:
        a = self.edges[:, 0] == p
        b = self.edges[:, 1] == p
        idx = np.concatenate([self.edges[a, 1], self.edges[b, 0]])
        w = np.concatenate([self.alpha[a], self.alpha[b]])
        o = np.argsort(idx, kind="stable")
        return idx[o], w[o]

    def subgraph(self, keep: np.ndarray) -> NeighborGraph:
        """Graph over ``np.flatnonzero(keep)`` with re-indexed vertices."""
        keep = np.asarray(keep, dtype=bool)
        new_index = np.cumsum(keep) - 1
        sel = keep[self.edges[:, 0]] & keep[self.edges[:, 1]] if len(self.edges) else np.zeros(0, dtype=bool)
        return NeighborGraph(int(keep.sum()), new_index[self.edges[sel]], self.alpha[sel])

    def components(self) -> np.ndarray:
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        A = coo_matrix((np.ones(len(self.edges)), (self.edges[:, 0], self.edges[:, 1])), shape=(self.n, self.n))
        return connected_components(A, directed=False)[1]


def build_neighbor_graph(features, cfg: SolverConfig | None = None) -> NeighborGraph:
    """Cosine-distance radius graph capped at ``k`` nearest, symmetrized by union."""
    cfg = cfg or SolverConfig()
    F = _normalize_rows(_features_of(features))
    P = len(F)
    if P < 2 or cfg.neighbor_k == 0:
        return NeighborGraph.empty(P)
    S = F @ F.T
    D = 1.0 - S
    np.fill_diagonal(D, np.inf)
    k = min(cfg.neighbor_k, P - 1)
    order = np.argsort(D, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(P), k)
    cols = order.ravel()
    ok = D[rows, cols] <= cfg.neighbor_radius
    i, j = np.minimum(rows[ok], cols[ok]), np.maximum(rows[ok], cols[ok])
    pairs = np.unique(np.stack([i, j], axis=1), axis=0) if ok.any() else np.zeros((0, 2), dtype=int)
    alpha = np.maximum(0.0, S[pairs[:, 0], pairs[:, 1]]) if len(pairs) else np.zeros(0)
    return NeighborGraph(P, pairs.astype(int), alpha)


@dataclass
class FeatureInit:
    weights: np.ndarray
    labels: np.ndarray
    degenerate: bool = False


def two_means(F: np.ndarray, seed: int = 0, max_iter: int = 100) -> np.ndarray:
    """Lloyd iterations from farthest-point seeding; returns 0/1 labels."""
    P = len(F)
    rng = np.random.default_rng(seed)
    first = int(rng.integers(P))
    second = int(np.argmax(np.linalg.norm(F - F[first], axis=1)))
    C = np.stack([F[first], F[second]])
    labels = np.full(P, -1)
    for _ in range(max_iter):
        d = np.linalg.norm(F[:, None, :] - C[None], axis=2)
        new = (d[:, 1] < d[:, 0]).astype(int)
        if np.array_equal(new, labels):
            break
        labels = new
        if labels.all() or not labels.any():
            break
        C = np.stack([F[labels == 0].mean(axis=0), F[labels == 1].mean(axis=0)])
    return labels


def init_weights_from_features(features, seed: int = 0) -> FeatureInit:
    """2-means on unit-normalized features; the larger cluster gets 0.95."""
    F = _normalize_rows(_features_of(features))
    P = len(F)
    if P == 0:
        raise DegenerateInputError("no points to initialize")
    if P == 1:
        return FeatureInit(np.array([W_HIGH]), np.ones(1, dtype=int))
    if np.all(np.abs(F - F[0]).max(axis=1) < 1e-12):
        return FeatureInit(np.full(P, 0.5), np.zeros(P, dtype=int), degenerate=True)
    labels = two_means(F, seed)
    n1 = int(labels.sum())
    big = 1 if n1 > P - n1 else 0 if n1 < P - n1 else int(labels[0])
    high = labels == big
    return FeatureInit(np.where(high, W_HIGH, W_LOW), high.astype(int))


# -- loss ------------------------------------------------------------------


@dataclass
class LossBreakdown:
    main: float
    ent: float
    smooth: float
    init: float
    total: float

    def as_dict(self) -> dict:
        return {"main": self.main, "ent": self.ent, "smooth": self.smooth, "init": self.init, "total": self.total}


@dataclass
class LossGradient:
    rot0: np.ndarray
    trans0: np.ndarray
    rot1: np.ndarray
    trans1: np.ndarray
    logits: np.ndarray

    def transform_vector(self) -> np.ndarray:
        return np.concatenate([self.rot0, self.trans0, self.rot1, self.trans1])


def _rt(T):
    if isinstance(T, RigidTransform):
        return T.rotation, T.translation
    return np.asarray(T[0], dtype=float), np.asarray(T[1], dtype=float)


def _part_term(x0, xt, d, R, t, loss):
    y = x0 @ R.T
    e = y + t - xt
    n = np.sqrt(np.einsum("ij,ij->i", e, e))
    r = n / d
    return y, e, r, loss.value(r), loss.weight(r)


def window_loss(x0, xt, T0, T1, logits, w_init, graph: NeighborGraph, cfg: SolverConfig | None = None, grad: bool = False):
    """Loss of one frame pair; with ``grad=True`` also returns a :class:`LossGradient`.

    Transform gradients are with respect to left tangent increments
    ``R <- exp(dw) R`` and ``t <- t + dt``; the weight gradient is with
    respect to the logits.
    """
    cfg = cfg or SolverConfig()
    x0 = np.asarray(x0, dtype=float)
    xt = np.asarray(xt, dtype=float)
    ell = np.asarray(logits, dtype=float)
    w0 = np.asarray(w_init, dtype=float)
    R0, t0 = _rt(T0)
    R1, t1 = _rt(T1)
    huber = RobustLoss.huber(HUBER_DELTA)
    d = np.linalg.norm(x0 - xt, axis=1) + cfg.eps
    y0, e0, r0, rho0, psi0 = _part_term(x0, xt, d, R0, t0, huber)
    y1, e1, r1, rho1, psi1 = _part_term(x0, xt, d, R1, t1, huber)

    w = sigmoid(ell)
    v = sigmoid(-ell)  # 1 - w
    log_w = -np.logaddexp(0.0, -ell)
    log_v = -np.logaddexp(0.0, ell)

    main = float(np.sum(v * rho0 + w * rho1))
    ent = float(-np.sum(w * log_w + v * log_v))
    if len(graph.edges):
        ei, ej = graph.edges[:, 0], graph.edges[:, 1]
        diff = w[ei] - w[ej]
        smooth = float(2.0 * np.sum(graph.alpha * np.abs(diff)))
    else:
        smooth = 0.0
    lo, hi = np.log(BCE_CLAMP), np.log1p(-BCE_CLAMP)
    lw_c = np.clip(log_w, lo, hi)
    lv_c = np.clip(log_v, lo, hi)
    init = float(-np.sum(w0 * lw_c + (1.0 - w0) * lv_c))
    total = cfg.lambda_main * main + cfg.lambda_smooth * smooth + cfg.lambda_ent * ent + cfg.lambda_init * init

    for name, val in (("main", main), ("ent", ent), ("smooth", smooth), ("init", init), ("total", total)):
        if not np.isfinite(val):
            raise NumericalFailure(f"non-finite value in loss term '{name}'")
    out = LossBreakdown(main, ent, smooth, init, total)
    if not grad:
        return out

    def transform_grad(coef, y, e, psi):
        ge = (cfg.lambda_main * coef * psi / (d * d))[:, None] * e
        return np.cross(y, ge).sum(axis=0), ge.sum(axis=0)

    gr0, gt0 = transform_grad(v, y0, e0, psi0)
    gr1, gt1 = transform_grad(w, y1, e1, psi1)

    wv = w * v
    dw = cfg.lambda_main * (rho1 - rho0)
    if len(graph.edges):
        s = 2.0 * cfg.lambda_smooth * graph.alpha * np.sign(diff)
        dw = dw + np.bincount(ei, weights=s, minlength=len(w)) - np.bincount(ej, weights=s, minlength=len(w))
    g_ell = dw * wv - cfg.lambda_ent * ell * wv
    in_w = (log_w > lo) & (log_w < hi)
    in_v = (log_v > lo) & (log_v < hi)
    g_ell = g_ell - cfg.lambda_init * (w0 * v * in_w - (1.0 - w0) * w * in_v)
    return out, LossGradient(gr0, gt0, gr1, gt1, g_ell)


# -- per-window solver ------------------------------------------------------


@dataclass(eq=False)
class PairResult:
    t: int
    T0: RigidTransform
    T1: RigidTransform
    trace: np.ndarray
    initial: LossBreakdown | None
    final: LossBreakdown | None
    single_part: bool = False
    fallback: bool = False


@dataclass(eq=False)
class WindowResult:
    start: int
    stop: int
    logits: np.ndarray  # (n, P); NaN where a point has no weight
    pairs: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        return sigmoid(self.logits)

    @property
    def single_part(self) -> bool:
        return any(p.single_part for p in self.pairs)

    def transforms(self) -> list:
        return [(p.T0, p.T1) for p in self.pairs]

    def flipped(self) -> WindowResult:
        pairs = [
            PairResult(p.t, p.T1, p.T0, p.trace, p.initial, p.final, p.single_part, p.fallback) for p in self.pairs
        ]
        return WindowResult(self.start, self.stop, -self.logits, pairs, list(self.skipped))


def _adam_pair(x0, xt, T0, T1, ell, w0, graph, cfg):
    R0, t0 = T0
    R1, t1 = T1
    opt_T = Adam(12, cfg.lr_transform)
    opt_w = Adam(len(ell), cfg.lr_weights)
    best = None
    trace = []
    first = None
    for k in range(cfg.iters_per_pair + 1):
        br, g = window_loss(x0, xt, (R0, t0), (R1, t1), ell, w0, graph, cfg, grad=True)
        trace.append(br.total)
        if first is None:
            first = br
        if best is None or br.total < best[0].total:
            best = (br, R0, t0, R1, t1, ell)
        if k == cfg.iters_per_pair:
            break
        step = opt_T.step(g.transform_vector())
        R0 = project_so3(so3_exp(-step[0:3]) @ R0)
        t0 = t0 - step[3:6]
        R1 = project_so3(so3_exp(-step[6:9]) @ R1)
        t1 = t1 - step[9:12]
        ell = ell - opt_w.step(g.logits)
    br, R0, t0, R1, t1, ell = best
    return (R0, t0), (R1, t1), ell, np.asarray(trace), first, br


def _flip_closer(w_ref, z) -> bool:
    """True when ``1 - z`` agrees better with ``w_ref`` than ``z`` does."""
    if len(w_ref) == 0:
        return False
    return float(np.mean(np.abs(w_ref - (1.0 - z)))) < float(np.mean(np.abs(w_ref - z)))


def solve_window(tracks: TrackSet, w_init, graph: NeighborGraph | None = None, cfg: SolverConfig | None = None, window_index: int = 0) -> WindowResult:
    """Solve pairs ``(0, t)`` of one window.

    ``w_init`` holds frame-0 weights (probabilities, NaN for points without
    one). Weights are chained: pair ``t`` starts from the optimized weights of
    pair ``t-1``, and its EM labels are those weights binarized.
    """
    cfg = cfg or SolverConfig()
    X = tracks.positions
    n, P = tracks.frame_count, tracks.point_count
    graph = graph or NeighborGraph.empty(P)
    w_init = np.asarray(w_init, dtype=float)
    known = np.isfinite(w_init)
    logits = np.full((n, P), np.nan)
    w0c = np.clip(w_init, BCE_CLAMP, 1.0 - BCE_CLAMP)
    logits[0, known] = logit(w0c[known])
    cur = logits[0].copy()
    out = WindowResult(0, n, logits)
    rng = np.random.default_rng([cfg.seed, window_index])
    for t in range(1, n):
        active = tracks.valid[0] & tracks.valid[t] & known
        if np.count_nonzero(active) < MIN_PAIR_POINTS:
            out.skipped.append(t)
            continue
        x0, xt = X[0, active], X[t, active]
        ell = cur[active].copy()
        labels = ell >= 0.0
        single, fallback = False, False
        try:
            Ta, Tb = init_pair_transforms(x0, xt, labels, cfg.ransac_inlier_threshold, cfg.ransac_iters, rng)
        except DegenerateInputError:
            fallback = True
            Ta, Tb, labels, single = split_by_motion(x0, xt, cfg.ransac_inlier_threshold, cfg.ransac_iters, rng)
            if _flip_closer(sigmoid(ell), labels.astype(float)):
                Ta, Tb, labels = Tb, Ta, ~labels
        if not single:
            em = em_refine(x0, xt, Ta, Tb, labels, cfg.em_rounds)
            Ta, Tb = em.T0, em.T1
            if fallback:
                # the old weights carried no usable split; start from the motion split
                ell = np.where(em.labels, 1.0, -1.0) * logit(W_HIGH)
        sub = graph.subgraph(active)
        w0 = w0c[active]
        if single:
            # one rigid motion explains everything: put all points on one side
            side = 1.0 if np.count_nonzero(ell >= 0) * 2 >= len(ell) else -1.0
            ell = np.full(len(ell), side * logit(W_HIGH))
            br = window_loss(x0, xt, Ta, Tb, ell, w0, sub, cfg)
            trace, first, final = np.array([br.total]), br, br
        else:
            Ta, Tb, ell, trace, first, final = _adam_pair(x0, xt, Ta, Tb, ell, w0, sub, cfg)
        logits[t, active] = ell
        cur[active] = ell
        out.pairs.append(
            PairResult(t, RigidTransform(*Ta), RigidTransform(*Tb), trace, first, final, single, fallback)
        )
    return out


# -- propagation across windows ------------------------------------------------


def align_identity(reference, candidate) -> tuple[np.ndarray, bool]:
    """Flip ``candidate`` weights when ``1 - candidate`` matches ``reference`` better.

    Only entries finite in both are compared. Returns ``(aligned, flipped)``.
    """
    reference = np.asarray(reference, dtype=float)
    candidate = np.asarray(candidate, dtype=float)
    shared = np.isfinite(reference) & np.isfinite(candidate)
    flip = _flip_closer(reference[shared], candidate[shared])
    return (1.0 - candidate if flip else candidate.copy()), flip


def _latest_known(logits: np.ndarray) -> np.ndarray:
    out = np.full(logits.shape[1], np.nan)
    for row in logits:
        ok = np.isfinite(row)
        out[ok] = row[ok]
    return out


def propagate_weights(prev: WindowResult, next_tracks: TrackSet | None = None, features=None) -> np.ndarray:
    """Frame-0 weights for the next window (probabilities).

    Points with a weight on the shared boundary frame keep it. Others get the
    cosine-similarity weighted average of the boundary weights (negative
    similarities count as zero), falling back to the point's latest weight in
    the previous window, then to 0.5.
    """
    if features is None and next_tracks is not None:
        features = next_tracks.features
    boundary = prev.logits[-1]
    persist = np.isfinite(boundary)
    P = len(boundary)
    out = np.full(P, np.nan)
    out[persist] = sigmoid(boundary[persist])
    new = ~persist
    if not new.any():
        return out
    if not persist.any() and features is None:
        raise CannotPropagateError("no shared points and no features to propagate weights")
    if features is not None and persist.any():
        F = _normalize_rows(features)
        S = np.maximum(F[new] @ F[persist].T, 0.0)
        den = S.sum(axis=1)
        num = S @ out[persist]
        est = np.divide(num, den, out=np.full(len(den), np.nan), where=den > 0)
        out[new] = est
    fill = np.isnan(out)
    if fill.any():
        latest = sigmoid(_latest_known(prev.logits))
        out[fill] = np.where(np.isfinite(latest[fill]), latest[fill], 0.5)
    return out


# -- whole sequence ----------------------------------------------------------


def init_weights_from_motion(tracks: TrackSet, cfg: SolverConfig | None = None) -> FeatureInit:
    """Motion-only start: split frame 0 against the farthest frame sharing enough points.

    The widest baseline separates the parts best. The larger motion class
    gets 0.95, mirroring the feature rule; if no second motion is found the
    weights stay at 0.5 and ``degenerate`` is set.
    """
    cfg = cfg or SolverConfig()
    P = tracks.point_count
    X, V = tracks.positions, tracks.valid
    for t in range(tracks.frame_count - 1, 0, -1):
        shared = V[0] & V[t]
        if np.count_nonzero(shared) >= MIN_PAIR_POINTS and not is_collinear(X[0, shared]):
            break
    else:
        return FeatureInit(np.full(P, 0.5), np.zeros(P, dtype=int), degenerate=True)
    rng = np.random.default_rng([cfg.seed, 1 << 20])
    _, _, lab, single = split_by_motion(X[0, shared], X[t, shared], cfg.ransac_inlier_threshold, cfg.ransac_iters, rng)
    if single:
        return FeatureInit(np.full(P, 0.5), np.zeros(P, dtype=int), degenerate=True)
    n1 = int(lab.sum())
    high_cls = n1 > len(lab) - n1
    w = np.full(P, np.nan)
    w[shared] = np.where(lab == high_cls, W_HIGH, W_LOW)
    labels = np.zeros(P, dtype=int)
    labels[shared] = lab == high_cls
    return FeatureInit(w, labels)


def window_ranges(N: int, n: int) -> list[tuple[int, int]]:
    """Stride ``n-1`` so consecutive windows share one boundary frame."""
    return [(s, min(s + n, N)) for s in range(0, N - 1, n - 1)]


@dataclass(eq=False)
class SegmentationResult:
    field: PartWeightField
    point_ids: np.ndarray
    windows: list
    init_degenerate: bool = False
    flips: list = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        return self.field.weights

    @property
    def masks(self) -> np.ndarray:
        return self.field.masks

    @property
    def labels(self) -> np.ndarray:
        """Per-point majority label over frames."""
        return (self.masks.mean(axis=0) >= 0.5).astype(int)

    def to_dict(self) -> dict:
        return {
            "frames": int(self.field.logits.shape[0]),
            "weights": [[float(v) for v in row] for row in self.weights],
            "masks": [[bool(v) for v in row] for row in self.masks],
            "point_ids": [int(v) for v in self.point_ids],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _fill_unknown(logits: np.ndarray, features) -> np.ndarray:
    """Nearest-in-time known logit per point, else feature neighbors, else 0."""
    N, P = logits.shape
    out = logits.copy()
    for p in range(P):
        known = np.flatnonzero(np.isfinite(logits[:, p]))
        if len(known) == 0 or len(known) == N:
            continue
        frames = np.arange(N)
        nearest = known[np.argmin(np.abs(frames[:, None] - known[None]), axis=1)]
        out[:, p] = logits[nearest, p]
    empty = ~np.isfinite(out).any(axis=0)
    if empty.any():
        fill = np.zeros(int(empty.sum()))
        if features is not None and (~empty).any():
            F = _normalize_rows(features)
            S = np.maximum(F[empty] @ F[~empty].T, 0.0)
            w = sigmoid(np.nanmean(out[:, ~empty], axis=0))
            den = S.sum(axis=1)
            est = np.divide(S @ w, den, out=np.full(len(den), 0.5), where=den > 0)
            fill = logit(np.clip(est, BCE_CLAMP, 1 - BCE_CLAMP))
        out[:, empty] = fill
    return out


def segment(tracks: TrackSet, cfg: SolverConfig | None = None) -> SegmentationResult:
    """Segment a (filtered) track set into two parts over all frames."""
    cfg = cfg or SolverConfig()
    N, P = tracks.frame_count, tracks.point_count
    features = tracks.features
    if features is not None:
        graph = build_neighbor_graph(features, cfg)
        fi = init_weights_from_features(features, cfg.seed)
        w0, degenerate = fi.weights, fi.degenerate
    else:
        graph = NeighborGraph.empty(P)
        fi = init_weights_from_motion(tracks, cfg)
        w0, degenerate = fi.weights, fi.degenerate
        if not degenerate:
            # points unseen in the split frames start undecided
            w0 = np.where(np.isfinite(w0), w0, 0.5)
    logits = np.full((N, P), np.nan)
    windows, flips = [], []
    for wi, (s, e) in enumerate(window_ranges(N, cfg.window_size)):
        res = solve_window(tracks.frames(s, e), w0, graph, cfg, window_index=wi)
        res.start, res.stop = s, e
        if wi > 0:
            # the solver may have swapped part identity through a fallback split
            later = _latest_known(res.logits[1:]) if len(res.logits) > 1 else np.full(P, np.nan)
            _, flip = align_identity(w0, sigmoid(later))
            if flip:
                res = res.flipped()
                res.logits[0] = logit(np.clip(w0, BCE_CLAMP, 1 - BCE_CLAMP))
            flips.append(flip)
        block = logits[s:e]
        take = np.isfinite(res.logits) & ~np.isfinite(block)
        block[take] = res.logits[take]
        later_rows = np.isfinite(res.logits[1:])
        block[1:][later_rows] = res.logits[1:][later_rows]
        if wi == 0 and degenerate and res.pairs:
            # frame-0 weights were uninformative; points keep their part over time
            last = _latest_known(res.logits[1:])
            ok = np.isfinite(last)
            block[0, ok] = last[ok]
        windows.append(res)
        if e < N:
            w0 = propagate_weights(res, None, features)
    logits = _fill_unknown(logits, features)
    return SegmentationResult(PartWeightField(logits), tracks.ids.copy(), windows, degenerate, flips)
