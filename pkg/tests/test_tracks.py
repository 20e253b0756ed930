import json

import numpy as np
import pytest

from artikin.errors import InsufficientDataError, InvalidDepthError, ParseError, SchemaError
from artikin.tracks import (
    CameraIntrinsics,
    FilterConfig,
    TrackSet,
    bundle_from_dict,
    filter_tracks,
    lift_to_3d,
    load_bundle,
    save_bundle,
)

K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0)


def make_tracks(X, vis=None, fg=None):
    N, P, _ = X.shape
    vis = np.ones((N, P)) if vis is None else vis
    fg = np.ones((N, P), dtype=bool) if fg is None else fg
    return TrackSet(X, vis, fg)


def test_lift_examples():
    assert np.allclose(lift_to_3d(320, 240, 1.0, K), [0, 0, 1])
    assert np.allclose(lift_to_3d(820, 240, 2.0, K), [2, 0, 2])
    with pytest.raises(InvalidDepthError):
        lift_to_3d(320, 240, 0.0, K)


def test_low_visibility_point_removed(rng):
    X = rng.normal(scale=1e-3, size=(5, 10, 3)).cumsum(axis=0)
    vis = np.ones((5, 10))
    vis[:, 3] = 0.4
    out = filter_tracks(make_tracks(X, vis))
    assert not out.valid[:, 3].any()
    assert out.valid[:, [0, 1, 2, 4]].all()


def test_teleport_step_excluded(rng):
    N, P = 6, 100
    X = np.repeat(rng.normal(size=(1, P, 3)), N, axis=0)
    X = X + rng.uniform(-5e-4, 5e-4, size=(N, P, 3))  # every step <= 1 mm
    X[3:, 17] += [1.0, 0, 0]  # step 2 -> 3 teleports
    tr = make_tracks(X)
    d = np.linalg.norm(np.diff(X, axis=0), axis=2)
    thr = d.mean() + 2 * d.std()
    assert d[2, 17] > thr
    out = filter_tracks(tr)
    assert not out.valid[2, 17]
    assert np.array_equal(out.valid[:-1], d <= thr)


def test_uniform_motion_unchanged():
    X = np.zeros((4, 8, 3))
    X[:, :, 0] = np.arange(8)[None, :]
    X[:, :, 1] = 0.01 * np.arange(4)[:, None]
    tr = make_tracks(X)
    assert np.array_equal(filter_tracks(tr).valid, tr.valid)


def test_filter_idempotent(rng):
    X = rng.normal(scale=0.01, size=(8, 30, 3)).cumsum(axis=0)
    vis = rng.uniform(0.3, 1.0, size=(8, 30))
    once = filter_tracks(make_tracks(X, vis))
    twice = filter_tracks(once)
    assert np.array_equal(once.valid, twice.valid)


def test_too_few_points():
    X = np.zeros((3, 5, 3))
    with pytest.raises(InsufficientDataError):
        filter_tracks(make_tracks(X))


def test_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(tau_c=1.5)
    with pytest.raises(ValueError):
        FilterConfig(tau_v=0)


def _doc2d(rng, N=3, P=7):
    pts = []
    for j in range(P):
        pts.append({
            "id": j,
            "visibility": [1.0] * N,
            "foreground": [True] * N,
            "uv": rng.uniform(0, 640, size=(N, 2)).tolist(),
            "depth": rng.uniform(0.5, 2.0, size=N).tolist(),
        })
    return {"frame_count": N, "intrinsics": K.to_dict(), "points": pts}


def test_2d_bundle_lifted_pointwise(rng):
    doc = _doc2d(rng)
    ds = bundle_from_dict(doc)
    for j, p in enumerate(doc["points"]):
        for t in range(3):
            u, v = p["uv"][t]
            assert np.allclose(ds.tracks.positions[t, j], lift_to_3d(u, v, p["depth"][t], K))


def test_2d_bundle_bad_depth(rng):
    doc = _doc2d(rng)
    doc["points"][2]["depth"][1] = -1.0
    with pytest.raises(InvalidDepthError):
        bundle_from_dict(doc)


def test_missing_frame_count(rng):
    doc = _doc2d(rng)
    del doc["frame_count"]
    with pytest.raises(SchemaError, match="frame_count"):
        bundle_from_dict(doc)


def test_invalid_json(tmp_path):
    p = tmp_path / "b.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_bundle(p)


def test_feature_presence_must_agree(rng):
    doc = _doc2d(rng)
    doc["points"][0]["feature"] = [1.0, 2.0]
    with pytest.raises(SchemaError):
        bundle_from_dict(doc)


@pytest.mark.parametrize("name", ["laptop-like", "scissors-like", "drawer-like", "usb-like"])
def test_preset_bundle_round_trip(name, tmp_path):
    from conftest import preset_scene

    ds = preset_scene(name, frames=12)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_bundle(ds, a)
    back = load_bundle(a)
    assert back.tracks.equals(ds.tracks)
    save_bundle(back, b)
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(a.read_text())["frame_count"] == 12
