import csv
import json

import numpy as np
import pytest

from artikin.cli import build_parser, main
from artikin.synth import benchmark_noise, generate_scene, preset
from artikin.tracks import load_bundle, save_bundle

FRAMES = "16"


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    p = d / "laptop.json"
    assert main(["synth", "--preset", "laptop-like", "--seed", "1", "--frames", FRAMES, "-o", str(p)]) == 0
    return p


@pytest.fixture(scope="module")
def pipeline_out(bundle, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["pipeline", str(bundle), "--out-dir", str(out)]) == 0
    return out


def test_synth_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert main(["synth", "--preset", "drawer-like", "--seed", "7", "--frames", "5", "-o", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_unknown_preset_lists_presets(tmp_path, capsys):
    assert main(["synth", "--preset", "toaster", "-o", str(tmp_path / "x.json")]) == 3
    err = capsys.readouterr().err
    assert "laptop-like" in err and "drawer-like" in err


def test_bad_spec_names_field(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"preset": "usb-like", "noise": {"jitter": 1}}))
    assert main(["synth", "--spec", str(spec), "-o", str(tmp_path / "x.json")]) == 3
    assert "spec.noise" in capsys.readouterr().err


def test_exit_codes(tmp_path, bundle, capsys):
    assert main(["segment", str(tmp_path / "missing.json")]) == 3
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"refine": {"iterations": 3}}))
    assert main(["segment", str(bundle), "-c", str(cfg)]) == 2
    assert "config.refine" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["segment"])
    assert exc.value.code == 2


def test_pipeline_writes_all_artifacts(pipeline_out):
    for name in ("segmentation.json", "joint.json", "poses.json", "joint_refined.json", "report.json", "report.csv"):
        assert (pipeline_out / name).exists()
    rep = json.loads((pipeline_out / "report.json").read_text())
    assert rep["kind"] == "revolute" and rep["miou"] > 0.9
    refined = json.loads((pipeline_out / "joint_refined.json").read_text())
    r = refined["refinement"]
    assert r["final_objective"] <= r["initial_objective"]


def test_stage_commands_match_pipeline(bundle, pipeline_out, tmp_path):
    seg, joint, refined = tmp_path / "seg.json", tmp_path / "joint.json", tmp_path / "ref.json"
    assert main(["segment", str(bundle), "-o", str(seg)]) == 0
    assert seg.read_bytes() == (pipeline_out / "segmentation.json").read_bytes()
    assert main(["estimate-joint", str(bundle), "--segmentation", str(seg), "-o", str(joint), "--poses-out", str(tmp_path / "p.json")]) == 0
    assert joint.read_bytes() == (pipeline_out / "joint.json").read_bytes()
    assert main(["refine", str(bundle), "--joint", str(joint), "--segmentation", str(seg), "-o", str(refined)]) == 0
    assert refined.read_bytes() == (pipeline_out / "joint_refined.json").read_bytes()
    rep = tmp_path / "rep.json"
    assert main(["eval", str(bundle), "--joint", str(refined), "--segmentation", str(seg), "-o", str(rep)]) == 0
    a = json.loads(rep.read_text())
    b = json.loads((pipeline_out / "report.json").read_text())
    assert a["axis_deg"] == b["axis_deg"] and a["miou"] == b["miou"]


def test_eval_ground_truth_against_itself(bundle, tmp_path):
    ds = load_bundle(bundle)
    gt = ds.ground_truth
    joint = tmp_path / "gt_joint.json"
    joint.write_text(json.dumps(gt.joint.to_dict()))
    seg = tmp_path / "gt_seg.json"
    w = np.broadcast_to(gt.labels.astype(float), ds.tracks.valid.shape)
    seg.write_text(json.dumps({"weights": w.tolist()}))
    rep = tmp_path / "r.json"
    assert main(["eval", str(bundle), "--joint", str(joint), "--segmentation", str(seg), "-o", str(rep)]) == 0
    d = json.loads(rep.read_text())
    assert d["axis_deg"] == 0.0 and d["state_mae"] == 0.0 and d["position_cm"] < 1e-9 and d["miou"] == 1.0
    seg.write_text(json.dumps({"weights": (1.0 - w).tolist()}))
    assert main(["eval", str(bundle), "--joint", str(joint), "--segmentation", str(seg), "-o", str(rep)]) == 0
    assert json.loads(rep.read_text())["miou"] == 1.0


def test_pipeline_with_external_poses(bundle, tmp_path):
    ds = load_bundle(bundle)
    poses = tmp_path / "poses.json"
    poses.write_text(json.dumps([[p.to_record() for p in frame] for frame in ds.ground_truth.calibrated_poses()]))
    out = tmp_path / "out"
    assert main(["pipeline", str(bundle), "--poses", str(poses), "--out-dir", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["coarse"]["axis_deg"] < 1e-6


def test_featureless_bundle_completes(tmp_path):
    ds = generate_scene(preset("drawer-like", seed=2, frames=12, noise=benchmark_noise()))
    ds.tracks.features = None
    p = tmp_path / "nofeat.json"
    save_bundle(ds, p)
    assert main(["pipeline", str(p), "--out-dir", str(tmp_path / "o")]) == 0


def test_batch_eval_csv(tmp_path):
    scenes = tmp_path / "scenes"
    scenes.mkdir()
    for seed in (0, 1):
        save_bundle(generate_scene(preset("drawer-like", seed=seed, frames=12, noise=benchmark_noise())), scenes / f"d{seed}.json")
    c1, c2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["eval", "--batch", str(scenes), "--csv", str(c1)]) == 0
    assert main(["eval", "--batch", str(scenes), "--jobs", "2", "--csv", str(c2)]) == 0
    assert c1.read_bytes() == c2.read_bytes()
    rows = list(csv.reader(c1.open()))
    assert [r[0] for r in rows[1:-1]] == ["d0", "d1"]
    assert rows[-1][0] == "mean±std"
    axis = [float(r[2]) for r in rows[1:-1]]
    m, s = rows[-1][2].split("±")
    assert float(m) == pytest.approx(np.mean(axis), rel=1e-3)
    assert float(s) == pytest.approx(np.std(axis), rel=1e-3, abs=1e-9)


def test_help_documents_every_flag(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.choices and "pipeline" in a.choices)
    for name, sp in sub.choices.items():
        text = sp.format_help()
        for act in sp._actions:
            for opt in act.option_strings:
                assert opt in text
            if act.option_strings and act.dest != "help":
                assert act.help, f"{name} {act.dest} lacks help"
