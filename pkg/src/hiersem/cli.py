"""Command-line front end: ``hiersem {synth,segment,train,predict,eval,ablate}``.

Exit codes: 0 success, 2 usage, 3 input error, 4 config error, 5 internal failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import forest as rf
from . import frames, pipeline, plotting
from .errors import ConfigError, InputError
from .evaluate import (
    ClassTaxonomy,
    confusion_with_misses,
    feature_ablation,
    metrics,
    write_metrics_csv,
)
from .features import ABLATION_GROUPS, FeatureLayout, write_feature_csv
from .segmap import pseudocolor, save_segmap
from .synthetic import SceneSpec, random_scene, render

log = logging.getLogger("hiersem")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_CONFIG, EXIT_INTERNAL = 0, 2, 3, 4, 5


def data_path(name: str) -> Path:
    return Path(str(resources.files("hiersem") / "data" / name))


def run_metadata(cfg: cfgmod.PipelineConfig, **extra) -> dict:
    meta = {
        "tool": "hiersem",
        "version": __version__,
        "numpy": np.__version__,
        "config_hash": cfg.config_hash(),
        "feature_hash": cfg.feature_hash(),
        "seed": cfg.forest.rng_seed,
        "depth_source": cfg.depth_source,
    }
    meta.update(extra)
    return meta


def _meta_lines(meta: dict) -> list:
    return ["meta " + json.dumps(meta, sort_keys=True)]


def _load_config(args) -> cfgmod.PipelineConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.PipelineConfig()
    return cfg.with_seed(args.seed)


def _load_taxonomy(args, cfg) -> ClassTaxonomy:
    path = getattr(args, "taxonomy", None) or cfg.taxonomy
    if path is None:
        return pipeline.default_taxonomy()
    try:
        return ClassTaxonomy.load(path)
    except OSError as e:
        raise ConfigError(f"cannot read taxonomy {path}: {e}") from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run(out: Path, meta: dict) -> None:
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _map(fn, items, jobs: int):
    """Ordered map over frames, optionally in worker processes."""
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


# -- synth --------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = _out_dir(args)
    for sub in ("depth", "color", "label", "instance", "scenes"):
        (out / sub).mkdir(exist_ok=True)
    if args.spec:
        specs = [SceneSpec.load(args.spec)]
    else:
        seed = args.seed if args.seed is not None else 0
        specs = [random_scene(seed + i) for i in range(args.scenes)]
    entries = []
    for i, spec in enumerate(specs):
        name = f"scene_{i:04d}"
        r = render(spec)
        frames.write_png(out / "depth" / f"{name}.png", r.depth)
        frames.write_png(out / "color" / f"{name}.png", r.color)
        frames.write_ids(out / "label" / f"{name}.png", r.labels)
        frames.write_ids(out / "instance" / f"{name}.png", r.instances)
        spec.save(out / "scenes" / f"{name}.yaml")
        entries.append(
            frames.FrameEntry(name, out / "depth" / f"{name}.png", out / "color" / f"{name}.png", out / "label" / f"{name}.png")
        )
    frames.write_manifest(out / "manifest.tsv", entries)
    # a config matched to the rendered camera
    cfg = cfgmod.load(data_path("synthetic.yaml"))
    cfg = replace(cfg, intrinsics=specs[0].intrinsics, taxonomy=None)
    (out / "config.yaml").write_text(cfgmod.dump(cfg))
    print(f"wrote {len(specs)} scenes to {out}")
    return EXIT_OK


# -- segment ------------------------------------------------------------------


def _read_frame(entry: frames.FrameEntry):
    depth = frames.read_depth(entry.depth)
    color = frames.read_color(entry.color)
    if depth.shape != color.shape[:2]:
        raise InputError(f"{entry.name}: depth {depth.shape} and color {color.shape[:2]} differ")
    return depth, color


def cmd_segment(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    entry = frames.FrameEntry(Path(args.depth).stem, Path(args.depth), Path(args.color))
    depth, color = _read_frame(entry)
    if not depth.any():
        warnings.warn(f"{entry.name}: no valid depth, segment map is empty")
    res = pipeline.segment_frame(depth, color, cfg)
    meta = run_metadata(cfg, frame=entry.name, regions=res.segments.n_regions, superpixels=res.superpixels.n_regions)
    save_segmap(res.segments, out / f"{entry.name}.seg")
    frames.write_png(out / f"{entry.name}.segments.png", pseudocolor(res.segments.labels), meta)
    frames.write_png(out / f"{entry.name}.superpixels.png", pseudocolor(res.superpixels.labels), meta)
    (out / f"{entry.name}.dendrogram.txt").write_text(res.dendrogram.dump())
    if args.dump_normals:
        from .normals import normals_to_rgb

        frames.write_png(out / f"{entry.name}.normals.png", normals_to_rgb(res.normals), meta)
    _write_run(out, meta)
    print(f"{entry.name}: {res.superpixels.n_regions} superpixels -> {res.segments.n_regions} regions")
    return EXIT_OK


# -- train --------------------------------------------------------------------


def _train_rows(job):
    entry, cfg, taxonomy = job
    try:
        depth, color = _read_frame(entry)
        raw = frames.read_raw_labels(entry.label)
    except InputError as e:
        return entry.name, None, str(e)
    gt = taxonomy.map_raw(raw)  # mismatches are fatal, not skipped
    res = pipeline.segment_frame(depth, color, cfg)
    X, y, _ = pipeline.training_rows(res, gt, cfg, taxonomy.K)
    return entry.name, (X, y), None


def cmd_train(args) -> int:
    cfg = _load_config(args)
    taxonomy = _load_taxonomy(args, cfg)
    out = _out_dir(args)
    entries = frames.read_manifest(args.manifest)
    missing = [e.name for e in entries if e.label is None]
    if missing:
        raise InputError(f"frames without labels in training manifest: {missing[:5]}")
    results = _map(_train_rows, [(e, cfg, taxonomy) for e in entries], args.jobs)
    Xs, ys, skipped = [], [], []
    for name, rows, err in results:
        if rows is None:
            warnings.warn(f"skipping frame {name}: {err}")
            skipped.append(name)
            continue
        Xs.append(rows[0])
        ys.append(rows[1])
    layout = pipeline.expected_layout(cfg)
    X = np.concatenate(Xs) if Xs else np.zeros((0, layout.length))
    y = np.concatenate(ys) if ys else np.zeros(0, dtype=np.int64)
    if len(X) == 0:
        raise InputError("no training regions survived purity filtering")
    model = rf.train(X, y, cfg.forest, n_classes=taxonomy.K, jobs=args.jobs)
    oob = rf.oob_error(model, X, y) if cfg.forest.bootstrap else None
    meta = run_metadata(
        cfg,
        frames=len(entries) - len(skipped),
        skipped=skipped,
        regions=int(len(X)),
        oob_error=oob,
    )
    model.metadata = {
        "run": meta,
        "layout": layout.to_list(),
        "taxonomy": taxonomy.to_dict(),
        "config": cfg.to_dict(),
    }
    rf.save(model, out / "model.rf")
    write_feature_csv(out / "features.csv", X, layout, y, _meta_lines(meta))
    _write_run(out, meta)
    print(f"trained on {len(X)} regions from {meta['frames']} frames ({len(skipped)} skipped)")
    if oob is not None:
        print(f"oob_error {oob:.4f}")
    return EXIT_OK


# -- predict ------------------------------------------------------------------


def _check_model(model: rf.Forest, cfg) -> None:
    layout = FeatureLayout.from_list(model.metadata.get("layout", []))
    if layout != pipeline.expected_layout(cfg):
        raise InputError("model feature layout does not match the configured feature layout")
    trained = model.metadata.get("run", {}).get("feature_hash")
    if trained and trained != cfg.feature_hash():
        warnings.warn("model was trained with different segmentation settings")


def _predict_one(job):
    entry, cfg, model, out = job
    depth, color = _read_frame(entry)
    res = pipeline.segment_frame(depth, color, cfg)
    pred = pipeline.predict_frame(res, model, cfg)
    meta = run_metadata(cfg, frame=entry.name, model_config_hash=model.metadata.get("run", {}).get("config_hash"))
    K = model.n_classes
    frames.write_ids(out / f"{entry.name}.class.png", pred.classes, meta)
    frames.write_ids(out / f"{entry.name}.instance.png", pred.instances.instances, meta)
    frames.write_png(out / f"{entry.name}.class_color.png", plotting.colorize_classes(pred.classes, K), meta)
    frames.write_png(out / f"{entry.name}.instance_color.png", pseudocolor(pred.instances.instances), meta)
    plotting.plot_panels(
        [color, pseudocolor(res.segments.labels), plotting.colorize_classes(pred.classes, K)],
        ["input", "segments", "classes"],
        out / f"{entry.name}.panel.png",
    )
    names = model.metadata.get("taxonomy", {}).get("names") or [str(i) for i in range(K)]
    with open(out / f"{entry.name}.segments.csv", "w", newline="") as f:
        for line in _meta_lines(meta):
            f.write(f"# {line}\n")
        w = csv.writer(f)
        w.writerow(["segment", "voxels", "class", "class_name"] + [f"p_{n}" for n in names])
        for s in range(res.segments.n_regions):
            c = int(pred.segment_classes[s])
            w.writerow([s, int(res.segments.sizes[s]), c, names[c]] + [f"{p:.6f}" for p in pred.posteriors[s]])
    return entry.name, pred.instances.n_instances


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    try:
        model = rf.load(args.model)
    except OSError as e:
        raise InputError(f"cannot read model {args.model}: {e}") from None
    _check_model(model, cfg)
    if args.manifest:
        entries = frames.read_manifest(args.manifest)
    elif args.depth and args.color:
        entries = [frames.FrameEntry(Path(args.depth).stem, Path(args.depth), Path(args.color))]
    else:
        raise InputError("give DEPTH COLOR or --manifest")
    done = _map(_predict_one, [(e, cfg, model, out) for e in entries], args.jobs)
    _write_run(out, run_metadata(cfg, frames=[n for n, _ in done]))
    for name, n in done:
        print(f"{name}: {n} instances")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------


def _gt_file(gt_dir: Path, name: str) -> Path | None:
    for cand in (gt_dir / f"{name}.png", gt_dir / "label" / f"{name}.png"):
        if cand.exists():
            return cand
    return None


def evaluate_dirs(pred_dir, gt_dir, taxonomy: ClassTaxonomy):
    """Summed confusion over frames present in both directories."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    K = taxonomy.K
    total = np.zeros((K, K), dtype=np.int64)
    missed = np.zeros(K, dtype=np.int64)
    used = []
    for p in sorted(pred_dir.glob("*.class.png")):
        name = p.name[: -len(".class.png")]
        g = _gt_file(gt_dir, name)
        if g is None:
            continue
        pred = frames.read_ids(p)
        gt = taxonomy.map_raw(frames.read_raw_labels(g))
        cm, miss = confusion_with_misses(pred, gt, K)
        total += cm
        missed += miss
        used.append(name)
    if not used:
        raise InputError(f"no frames of {pred_dir} have ground truth in {gt_dir}")
    return total, missed, used


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    taxonomy = _load_taxonomy(args, cfg)
    out = _out_dir(args)
    cm, missed, used = evaluate_dirs(args.pred_dir, args.gt_dir, taxonomy)
    met = metrics(cm, missed)
    meta = run_metadata(cfg, frames=len(used), unpredicted_pixels=int(missed.sum()))
    write_metrics_csv(out / "metrics.csv", cm, taxonomy.names, met, _meta_lines(meta))
    plotting.plot_confusion(cm, taxonomy.names, out / "confusion.png")
    _write_run(out, meta)
    for n, r in zip(taxonomy.names, met.recall):
        print(f"{n:>12s} {'n/a' if np.isnan(r) else f'{100 * r:5.1f}'}")
    print(f"class accuracy {100 * met.class_accuracy:.1f}  pixel accuracy {100 * met.pixel_accuracy:.1f}  ({len(used)} frames)")
    return EXIT_OK


# -- ablate -------------------------------------------------------------------


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    taxonomy = _load_taxonomy(args, cfg)
    out = _out_dir(args)
    entries = frames.read_manifest(args.manifest)
    results = _map(_train_rows, [(e, cfg, taxonomy) for e in entries], args.jobs)
    rows = [r for _, r, err in results if r is not None]
    if not rows:
        raise InputError("no usable frames")
    X = np.concatenate([r[0] for r in rows])
    y = np.concatenate([r[1] for r in rows])
    rng = np.random.default_rng(cfg.forest.rng_seed)
    perm = rng.permutation(len(X))
    n_val = max(1, int(round(args.val_fraction * len(X))))
    val, tr = perm[:n_val], perm[n_val:]
    fcfg = replace(cfg.forest, n_trees=args.trees)
    res = feature_ablation(
        X[tr], y[tr], X[val], y[val], pipeline.expected_layout(cfg), ABLATION_GROUPS, cfg=fcfg, names=taxonomy.names
    )
    meta = run_metadata(cfg, regions=int(len(X)), validation=int(n_val))
    res.write_csv(out / "ablation.csv", _meta_lines(meta))
    plotting.plot_ablation(res, out / "ablation.png")
    _write_run(out, meta)
    print(f"ablation over {len(res.groups)} groups x {len(res.classes)} classes -> {out / 'ablation.csv'}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config YAML")
    common.add_argument("--seed", type=int, help="overrides forest.rng_seed (synth: first scene seed)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    p = argparse.ArgumentParser(prog="hiersem", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="render synthetic RGBD scenes")
    s.add_argument("--scenes", type=int, default=30, help="number of random scenes")
    s.add_argument("--spec", help="render one scene from a SceneSpec YAML instead")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("segment", parents=[common], help="hierarchical segmentation of one frame")
    s.add_argument("depth", help="16-bit depth PNG in millimetres")
    s.add_argument("color", help="8-bit RGB PNG")
    s.add_argument("--dump-normals", action="store_true", help="also write the normal map")
    s.set_defaults(fn=cmd_segment)

    s = sub.add_parser("train", parents=[common], help="train the region classifier")
    s.add_argument("manifest", help="manifest TSV or frame directory")
    s.add_argument("--taxonomy", help="taxonomy YAML")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="label frames with a trained model")
    s.add_argument("depth", nargs="?", help="16-bit depth PNG")
    s.add_argument("color", nargs="?", help="8-bit RGB PNG")
    s.add_argument("--model", required=True, help="model.rf from train")
    s.add_argument("--manifest", help="label every frame of a manifest")
    s.set_defaults(fn=cmd_predict)

    s = sub.add_parser("eval", parents=[common], help="confusion and accuracy of predictions")
    s.add_argument("pred_dir", help="directory of *.class.png predictions")
    s.add_argument("gt_dir", help="directory of raw label PNGs")
    s.add_argument("--taxonomy", help="taxonomy YAML")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("ablate", parents=[common], help="per-feature-group accuracy matrix")
    s.add_argument("manifest", help="manifest TSV or frame directory")
    s.add_argument("--taxonomy", help="taxonomy YAML")
    s.add_argument("--trees", type=int, default=50, help="trees per ablation forest")
    s.add_argument("--val-fraction", type=float, default=0.3, help="share of regions held out")
    s.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    logging.captureWarnings(True)
    warnings.formatwarning = lambda message, *_a, **_k: str(message)
    try:
        return args.fn(args)
    except InputError as e:
        print(f"hiersem: input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as e:
        print(f"hiersem: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        log.exception("internal failure")
        print(f"hiersem: internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
