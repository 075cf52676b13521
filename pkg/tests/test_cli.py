import csv
import subprocess
import sys

import numpy as np
import pytest
import yaml
from scipy import ndimage

from hiersem import frames
from hiersem.cli import data_path
from hiersem.segmap import load_segmap
from hiersem.synthetic import Box, Plane, SceneSpec


def run(*args, cwd=None):
    p = subprocess.run(
        [sys.executable, "-m", "hiersem.cli", *map(str, args)], capture_output=True, text=True, cwd=cwd
    )
    return p.returncode, p.stdout, p.stderr


def _two_box_spec():
    floor = Plane((0, 1.2, 0), (0, -1, 0), color=(150, 140, 120), class_id=0, instance_id=0)
    a = Box((-0.6, 0.85, 3.0), (0.5, 0.7, 0.5), color=(90, 60, 40), class_id=1, instance_id=1)
    b = Box((0.6, 0.85, 3.0), (0.5, 0.7, 0.5), color=(90, 60, 40), class_id=1, instance_id=2)
    return SceneSpec(primitives=[floor, a, b], pitch_deg=0.0, depth_sigma=0.002, color_sigma=1.0, seed=1)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--scenes", 8, "--seed", 0, "--out", root / "data")[0] == 0
    cfg = yaml.safe_load((root / "data" / "config.yaml").read_text())
    cfg["forest"]["n_trees"] = 40
    (root / "config.yaml").write_text(yaml.safe_dump(cfg))
    lines = (root / "data" / "manifest.tsv").read_text().splitlines()
    (root / "data" / "train.tsv").write_text("\n".join(lines[:6]) + "\n")
    (root / "data" / "test.tsv").write_text("\n".join(lines[6:]) + "\n")
    code, out, err = run("train", root / "data" / "train.tsv", "--config", root / "config.yaml", "--out", root / "model")
    assert code == 0, err
    assert "oob_error" in out
    return root


def test_usage_error_exit_code():
    assert run("segment")[0] == 2
    assert run("frobnicate")[0] == 2


def test_missing_input_exit_code(tmp_path):
    code, _, err = run("segment", tmp_path / "no.png", tmp_path / "no2.png", "--out", tmp_path)
    assert code == 3 and "input error" in err


def test_bad_config_exit_code(tmp_path):
    (tmp_path / "c.yaml").write_text("oversegment: {k: -1}\n")
    assert run("synth", "--scenes", 1, "--out", tmp_path)[0] == 0
    code, _, err = run(
        "segment", tmp_path / "depth" / "scene_0000.png", tmp_path / "color" / "scene_0000.png",
        "--config", tmp_path / "c.yaml", "--out", tmp_path,
    )
    assert code == 4 and "config error" in err


def test_segment_plane_and_box_boundaries(tmp_path):
    spec = SceneSpec(
        primitives=[
            Plane((0, 0, 3.0), (0, 0, 1), color=(200, 200, 200), class_id=0, instance_id=0),
            Box((0, 0, 2.0), (0.8, 0.8, 0.4), color=(60, 90, 160), class_id=1, instance_id=1),
        ]
    )
    spec.save(tmp_path / "scene.yaml")
    assert run("synth", "--spec", tmp_path / "scene.yaml", "--out", tmp_path / "d")[0] == 0
    d = tmp_path / "d"
    code, out, _ = run(
        "segment", d / "depth" / "scene_0000.png", d / "color" / "scene_0000.png",
        "--config", data_path("synthetic.yaml"), "--out", tmp_path / "seg", "--dump-normals",
    )
    assert code == 0
    seg = load_segmap(tmp_path / "seg" / "scene_0000.seg")
    assert seg.n_regions >= 2
    inst = frames.read_ids(d / "instance" / "scene_0000.png")
    gt_edge = _boundary(inst)
    seg_edge = _boundary(seg.labels)
    near = ndimage.distance_transform_edt(~seg_edge) <= 2
    assert near[gt_edge].mean() >= 0.9
    for suffix in ("segments.png", "superpixels.png", "dendrogram.txt", "normals.png"):
        assert (tmp_path / "seg" / f"scene_0000.{suffix}").exists()


def _boundary(labels):
    e = np.zeros(labels.shape, bool)
    e[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    e[1:, :] |= labels[1:, :] != labels[:-1, :]
    return e


def test_segment_all_missing_depth(tmp_path):
    frames.write_png(tmp_path / "d.png", np.zeros((30, 40), np.uint16))
    frames.write_png(tmp_path / "c.png", np.zeros((30, 40, 3), np.uint8))
    code, _, err = run("segment", tmp_path / "d.png", tmp_path / "c.png", "--out", tmp_path / "o")
    assert code == 0 and "no valid depth" in err
    seg = load_segmap(tmp_path / "o" / "d.seg")
    assert seg.n_regions == 0 and (seg.labels == -1).all()


def test_segment_rerun_byte_identical(workspace, tmp_path):
    d = workspace / "data"
    outs = []
    for i in range(2):
        o = tmp_path / f"r{i}"
        run("segment", d / "depth" / "scene_0001.png", d / "color" / "scene_0001.png",
            "--config", workspace / "config.yaml", "--out", o)
        outs.append({p.name: p.read_bytes() for p in sorted(o.iterdir())})
    assert outs[0] == outs[1]
    meta = frames.png_metadata(tmp_path / "r0" / "scene_0001.segments.png")
    assert {"config_hash", "seed", "version"} <= set(meta)


def test_train_outputs_and_metadata(workspace):
    from hiersem import forest as rf

    model = rf.load(workspace / "model" / "model.rf")
    assert model.n_classes == 3 and model.n_features == 254
    meta = model.metadata
    assert {"run", "layout", "taxonomy", "config"} <= set(meta)
    assert meta["run"]["frames"] == 6 and meta["run"]["skipped"] == []
    assert (workspace / "model" / "features.csv").exists()


def test_train_skips_unreadable_frame(workspace, tmp_path):
    d = workspace / "data"
    (tmp_path / "broken.png").write_text("nope")
    rows = ["\t".join(str(d / p) for p in l.split("\t")) for l in (d / "train.tsv").read_text().splitlines()[:2]]
    rows.append(f"{tmp_path / 'broken.png'}\t{d / 'color' / 'scene_0000.png'}\t{d / 'label' / 'scene_0000.png'}")
    (tmp_path / "m.tsv").write_text("\n".join(rows) + "\n")
    code, out, err = run("train", tmp_path / "m.tsv", "--config", workspace / "config.yaml", "--out", tmp_path / "m")
    assert code == 0, err
    assert "skipping frame broken" in err
    assert "(1 skipped)" in out


def test_train_taxonomy_mismatch_names_raw_id(workspace, tmp_path):
    (tmp_path / "t.yaml").write_text("names: [floor, furniture]\n")
    code, _, err = run(
        "train", workspace / "data" / "train.tsv", "--config", workspace / "config.yaml",
        "--taxonomy", tmp_path / "t.yaml", "--out", tmp_path,
    )
    assert code == 3 and "3" in err


def test_train_empty_after_purity(tmp_path):
    for sub in ("depth", "color", "label"):
        (tmp_path / sub).mkdir()
    frames.write_png(tmp_path / "depth" / "a.png", np.full((30, 40), 2000, np.uint16))
    frames.write_png(tmp_path / "color" / "a.png", np.zeros((30, 40, 3), np.uint8))
    frames.write_png(tmp_path / "label" / "a.png", np.zeros((30, 40), np.uint16))
    code, _, err = run("train", tmp_path, "--out", tmp_path / "m")
    assert code == 3 and "no training regions" in err


@pytest.fixture(scope="module")
def predictions(workspace):
    out = workspace / "pred"
    code, stdout, err = run(
        "predict", "--manifest", workspace / "data" / "test.tsv", "--model", workspace / "model" / "model.rf",
        "--config", workspace / "config.yaml", "--out", out, "--jobs", 2,
    )
    assert code == 0, err
    return out


def test_predict_outputs(predictions):
    for suffix in ("class.png", "instance.png", "class_color.png", "instance_color.png", "segments.csv", "panel.png"):
        assert (predictions / f"scene_0006.{suffix}").exists()
    rows = [r for r in csv.reader(l for l in (predictions / "scene_0006.segments.csv").open() if not l.startswith("#"))]
    assert rows[0][:4] == ["segment", "voxels", "class", "class_name"] and len(rows[0]) == 7
    for r in rows[1:]:
        assert abs(sum(float(x) for x in r[4:]) - 1.0) < 1e-5


def test_predict_two_boxes_two_instances(workspace, tmp_path):
    _two_box_spec().save(tmp_path / "s.yaml")
    run("synth", "--spec", tmp_path / "s.yaml", "--out", tmp_path / "d")
    d = tmp_path / "d"
    code, _, err = run(
        "predict", d / "depth" / "scene_0000.png", d / "color" / "scene_0000.png",
        "--model", workspace / "model" / "model.rf", "--config", workspace / "config.yaml", "--out", tmp_path / "p",
    )
    assert code == 0, err
    gt_inst = frames.read_ids(d / "instance" / "scene_0000.png")
    inst = frames.read_ids(tmp_path / "p" / "scene_0000.instance.png")
    cls = frames.read_ids(tmp_path / "p" / "scene_0000.class.png")
    major = [np.bincount(inst[gt_inst == i]).argmax() for i in (1, 2)]
    assert major[0] != major[1]
    assert np.bincount(cls[gt_inst == 1]).argmax() == np.bincount(cls[gt_inst == 2]).argmax() == 1


def test_predict_layout_mismatch_rejected(workspace, tmp_path):
    cfg = yaml.safe_load((workspace / "config.yaml").read_text())
    cfg["hierarchy"]["bins"] = [10] * 9
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(cfg))
    d = workspace / "data"
    code, _, err = run(
        "predict", d / "depth" / "scene_0006.png", d / "color" / "scene_0006.png",
        "--model", workspace / "model" / "model.rf", "--config", tmp_path / "c.yaml", "--out", tmp_path,
    )
    assert code == 3 and "layout" in err


def test_eval_end_to_end(workspace, predictions, tmp_path):
    code, out, err = run("eval", predictions, workspace / "data" / "label", "--out", tmp_path)
    assert code == 0, err
    assert "(2 frames)" in out
    assert (tmp_path / "metrics.csv").exists() and (tmp_path / "confusion.png").exists()


def _perfect_preds(workspace, tmp_path, names):
    pred = tmp_path / "pred"
    pred.mkdir()
    for n in names:
        gt = frames.read_raw_labels(workspace / "data" / "label" / f"{n}.png") - 1
        frames.write_ids(pred / f"{n}.class.png", gt)
    return pred


def _metric_rows(path):
    rows = dict(r[:2] for r in csv.reader(l for l in path.open() if not l.startswith("#")) if len(r) == 2)
    return float(rows["class_accuracy"]), float(rows["pixel_accuracy"])


def test_eval_perfect_predictions(workspace, tmp_path):
    names = [f"scene_{i:04d}" for i in range(5)]
    pred = _perfect_preds(workspace, tmp_path, names)
    assert run("eval", pred, workspace / "data" / "label", "--out", tmp_path / "e")[0] == 0
    assert _metric_rows(tmp_path / "e" / "metrics.csv") == (1.0, 1.0)


def test_eval_single_frame_and_additivity(workspace, predictions, tmp_path):
    from hiersem.evaluate import confusion, metrics
    from hiersem.pipeline import default_taxonomy

    tax = default_taxonomy()
    per = []
    for n in ("scene_0006", "scene_0007"):
        p = frames.read_ids(predictions / f"{n}.class.png")
        g = tax.map_raw(frames.read_raw_labels(workspace / "data" / "label" / f"{n}.png"))
        per.append((n, confusion(p, g, 3)))
        one = tmp_path / n
        one.mkdir()
        (one / f"{n}.class.png").write_bytes((predictions / f"{n}.class.png").read_bytes())
        run("eval", one, workspace / "data" / "label", "--out", one / "e")
        m = metrics(per[-1][1])
        ca, pa = _metric_rows(one / "e" / "metrics.csv")
        assert ca == pytest.approx(m.class_accuracy, abs=1e-6) and pa == pytest.approx(m.pixel_accuracy, abs=1e-6)
    run("eval", predictions, workspace / "data" / "label", "--out", tmp_path / "all")
    lines = [l for l in (tmp_path / "all" / "metrics.csv").open() if not l.startswith("#")]
    table = np.array([[int(x) for x in l.strip().split(",")[1:]] for l in lines[1:4]])
    np.testing.assert_array_equal(table, per[0][1] + per[1][1])


def test_eval_no_overlap_rejected(tmp_path):
    (tmp_path / "p").mkdir()
    (tmp_path / "g").mkdir()
    code, _, err = run("eval", tmp_path / "p", tmp_path / "g", "--out", tmp_path)
    assert code == 3


def test_ablate_writes_csv_and_figure(workspace, tmp_path):
    code, _, err = run(
        "ablate", workspace / "data" / "manifest.tsv", "--config", workspace / "config.yaml",
        "--trees", 5, "--out", tmp_path,
    )
    assert code == 0, err
    rows = [r for r in csv.reader(l for l in (tmp_path / "ablation.csv").open() if not l.startswith("#"))]
    assert rows[0][0] == "group" and rows[-1][0] == "all" and len(rows) == 17
    assert (tmp_path / "ablation.png").exists()


def test_synth_outputs(workspace):
    d = workspace / "data"
    assert len(frames.read_manifest(d / "manifest.tsv")) == 8
    for sub in ("depth", "color", "label", "instance", "scenes"):
        assert len(list((d / sub).iterdir())) == 8
    assert (d / "config.yaml").exists()
