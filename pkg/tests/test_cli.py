import subprocess
import sys

import numpy as np
import pytest

from gprae.autoencoder import ArchitectureSpec, build_model, model_to_bytes
from gprae.cli import main, read_manifest
from gprae.synth import SceneSpec, TargetSpec, format_scene
from gprae.volume import save_labels, save_scores

SCENE = SceneSpec(T=64, X=64, Y=10, seed=4)
TARGETS = [TargetSpec(x0=12.0, y0=6 * SCENE.dy, depth=4.0, extent=2)]


@pytest.fixture
def scene_file(tmp_path):
    path = tmp_path / "scene.cfg"
    path.write_text(format_scene(SCENE, TARGETS, train_bscans=4))
    return path


def run_pipeline(tmp_path, scene_file, threads=1, tag="a"):
    d = tmp_path / tag
    d.mkdir()
    f = {k: str(d / v) for k, v in dict(
        h="h.gprv", v="v.gprv", labels="labels.csv", fused="fused.gprv", model="model.bin",
        mask="mask.gprv", scores="scores.csv", roc="roc.csv").items()}
    t = ["--threads", str(threads)]
    assert main(t + ["simulate", "--config", str(scene_file), "--out-h", f["h"],
                     "--out-v", f["v"], "--labels", f["labels"]]) == 0
    assert main(t + ["preprocess", "--h", f["h"], "--v", f["v"], "--out", f["fused"]]) == 0
    assert main(t + ["train", "--data", f["fused"], "--labels", f["labels"], "--arch", "a1",
                     "--dims", "3d", "--block", "32", "--stride", "8", "--n-bscans", "4",
                     "--epochs-max", "2", "--max-blocks", "40", "--seed", "1",
                     "--out", f["model"]]) == 0
    assert main(t + ["detect", "--model", f["model"], "--data", f["fused"], "--stride", "8",
                     "--gamma", "0.5", "--out", f["mask"], "--csv", f["scores"]]) == 0
    assert main(t + ["eval", "--scores", f["scores"], "--labels", f["labels"], "--skip", "4",
                     "--roc-out", f["roc"]]) == 0
    return f


def test_eval_perfect_fixture(tmp_path, capsys):
    save_scores([0.1, 0.9], tmp_path / "s.csv")
    save_labels([0, 1], tmp_path / "l.csv")
    assert main(["eval", "--scores", str(tmp_path / "s.csv"), "--labels",
                 str(tmp_path / "l.csv")]) == 0
    assert "auc,1.0" in capsys.readouterr().out.splitlines()


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["detect", "--model", "m"])
    assert exc.value.code == 2


def test_module_error_exit_1(tmp_path, capsys):
    code = main(["preprocess", "--h", str(tmp_path / "nope.gprv"), "--v", "x", "--out", "y"])
    assert code == 1
    assert "error" in capsys.readouterr().err
    save_scores([0.1, 0.9], tmp_path / "s.csv")
    save_labels([0, 0], tmp_path / "l.csv")
    assert main(["eval", "--scores", str(tmp_path / "s.csv"), "--labels",
                 str(tmp_path / "l.csv")]) == 1


def test_full_pipeline_and_determinism(tmp_path, scene_file):
    a = run_pipeline(tmp_path, scene_file, tag="a")
    b = run_pipeline(tmp_path, scene_file, tag="b")
    for key in ("h", "v", "labels", "fused", "model", "mask", "scores", "roc"):
        assert open(a[key], "rb").read() == open(b[key], "rb").read(), key
    roc_lines = open(a["roc"]).read().splitlines()
    assert roc_lines[0] == "threshold,fpr,tpr" and roc_lines[-1].startswith("auc,")
    man = read_manifest(a["model"] + ".manifest")
    assert man["subcommand"] == "train" and man["param.seed"] == "1"
    assert f"output.{a['model']}" in man
    c = run_pipeline(tmp_path, scene_file, threads=3, tag="c")
    assert open(a["model"], "rb").read() == open(c["model"], "rb").read()
    assert open(a["roc"]).read() == open(c["roc"]).read()


def test_train_epochs_zero_is_initial_model(tmp_path, scene_file):
    h, v, lab = (str(tmp_path / n) for n in ("h.gprv", "v.gprv", "l.csv"))
    main(["simulate", "--config", str(scene_file), "--out-h", h, "--out-v", v, "--labels", lab])
    out = tmp_path / "m.bin"
    assert main(["train", "--data", h, "--arch", "a2", "--dims", "2d", "--block", "32",
                 "--epochs-max", "0", "--seed", "3", "--out", str(out)]) == 0
    init = build_model(ArchitectureSpec("a2", "2d", (32, 32)), seed=3)
    assert out.read_bytes() == model_to_bytes(init)
    assert (tmp_path / "m.bin.history.csv").read_text() == "epoch,train_loss,val_loss\n"


def test_experiment_block_sweep(tmp_path, scene_file):
    out = tmp_path / "exp"
    assert main(["experiment", "--config", str(scene_file), "--sweep", "blocks",
                 "--blocks", "32,64", "--strides", "4,16", "--dims", "2d", "--archs", "a1",
                 "--n-values", "4", "--epochs-max", "1", "--max-blocks", "16",
                 "--out-dir", str(out)]) == 0
    lines = (out / "auc_blocks.csv").read_text().splitlines()
    assert len(lines) == 1 + 4
    header = lines[0].split(",")
    rows = [dict(zip(header, r.split(","))) for r in lines[1:]]
    assert {(r["block"], r["stride"]) for r in rows} == {
        ("32", "4"), ("32", "16"), ("64", "4"), ("64", "16")}


def test_experiment_arch_and_cross(tmp_path, scene_file):
    other = tmp_path / "scene_b.cfg"
    other.write_text(format_scene(SceneSpec(T=64, X=64, Y=10, seed=9, velocity=10.0,
                                            noise=0.03),
                                [TargetSpec(x0=15.0, y0=6 * SCENE.dy, depth=3.0)], 4))
    out = tmp_path / "exp"
    common = ["--config", str(scene_file), "--blocks", "32", "--strides", "16",
              "--n-values", "4", "--epochs-max", "1", "--max-blocks", "16", "--out-dir", str(out)]
    assert main(["experiment", "--sweep", "arch", "--archs", "a3", "--dims", "2d,3d"] + common) == 0
    table = (out / "auc_arch.csv").read_text().splitlines()
    assert [r.split(",")[1] for r in table[1:]] == ["2d", "3d"]
    assert main(["experiment", "--sweep", "cross", "--config-b", str(other), "--dims", "2d"]
                + common) == 0
    cross = (out / "auc_cross.csv").read_text().splitlines()
    assert cross[0] == "train,test_A,test_B" and len(cross) == 3
    vals = np.array([[float(v) for v in r.split(",")[1:]] for r in cross[1:]])
    assert ((vals >= 0) & (vals <= 1)).all()


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "gprae", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("gprae ")
