"""``gprae`` command line: simulate, preprocess, train, detect, eval, experiment.

Every subcommand writes ``<primary output>.manifest`` next to its main
output: plain ``key = value`` lines with the subcommand, all resolved
parameters, the seed, SHA-256 digests of inputs and outputs and the tool
version. Exit status is 0 on success, 2 on bad usage and 1 when the
pipeline itself fails.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import default_threads

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    pass


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, params: dict, inputs=(), outputs=()) -> Path:
    path = Path(str(path) + ".manifest")
    lines = [f"subcommand = {command}", f"version = {__version__}"]
    for key in sorted(params):
        if key in ("func", "command"):
            continue
        lines.append(f"param.{key} = {params[key]}")
    for p in inputs:
        lines.append(f"input.{p} = {_digest(p)}")
    for p in outputs:
        lines.append(f"output.{p} = {_digest(p)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    from .synth import SceneSpec, format_scene, generate_dataset, load_scene, with_overrides
    from .volume import save_labels, save_volume

    if args.config:
        spec, targets, n_train = load_scene(args.config)
    else:
        spec, targets, n_train = SceneSpec(), None, 5
    if args.seed is not None:
        spec = with_overrides(spec, seed=args.seed)
    ds = generate_dataset(spec, targets, n_train)
    save_volume(ds.v_h, args.out_h)
    save_volume(ds.v_v, args.out_v)
    save_labels(ds.labels, args.labels)
    outputs = [args.out_h, args.out_v, args.labels]
    if args.scene_out:
        Path(args.scene_out).write_text(format_scene(spec, ds.targets, n_train))
        outputs.append(args.scene_out)
    if args.split_out:
        Path(args.split_out).write_text(ds.manifest())
        outputs.append(args.split_out)
    params = {**vars(args), "seed": spec.seed}
    write_manifest(args.out_h, "simulate", params, [args.config] if args.config else [], outputs)
    print(f"simulated {spec.T}x{spec.X}x{spec.Y}, {int(ds.labels.sum())} positive B-scans")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    from .preprocess import fuse_volumes
    from .volume import Polarization, load_volume, save_volume

    v_h, v_v = load_volume(args.h), load_volume(args.v)
    if v_h.polarization is not Polarization.H or v_v.polarization is not Polarization.V:
        print("warning: inputs are not tagged H and V", file=sys.stderr)
    fused, lags = fuse_volumes(v_h, v_v, args.max_lag)
    save_volume(fused, args.out)
    write_manifest(args.out, "preprocess", vars(args), [args.h, args.v], [args.out])
    vals, counts = np.unique(lags, return_counts=True)
    print(f"fused {v_h.shape}; most common lag {int(vals[np.argmax(counts)])} samples")
    return EXIT_OK


def cmd_train(args) -> int:
    from .autoencoder import ArchitectureSpec, build_model, save_model
    from .estimator import HiddenInstabilityDetector
    from .volume import load_labels, load_volume

    vol = load_volume(args.data)
    labels = load_labels(args.labels) if args.labels else None
    det = HiddenInstabilityDetector(
        family=args.arch, dims=args.dims, block_size=args.block, stride=args.stride,
        n_training_bscans=args.n_bscans, epochs_max=args.epochs_max,
        batch_size=args.batch_size, patience=args.patience, min_delta=args.min_delta,
        validation_fraction=args.validation_fraction, max_train_blocks=args.max_blocks,
        seed=args.seed, threads=args.threads,
    )
    if args.epochs_max == 0:
        model = build_model(ArchitectureSpec(args.arch, args.dims, (args.block, args.block)), args.seed)
        history = []
    else:
        det.fit(vol, labels)
        model, history = det.model_, det.history_
    save_model(model, args.out)
    outputs = [args.out]
    hist_path = args.history or str(args.out) + ".history.csv"
    with open(hist_path, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for epoch, tr, va in history:
            fh.write(f"{epoch},{tr!r},{va!r}\n")
    outputs.append(hist_path)
    inputs = [args.data] + ([args.labels] if args.labels else [])
    write_manifest(args.out, "train", vars(args), inputs, outputs)
    print(f"trained {model.spec.name} for {len(history)} epochs")
    return EXIT_OK


def cmd_detect(args) -> int:
    from .anomaly import classify, export_mask, score_volume
    from .autoencoder import load_model
    from .blocking import BlockGeometry
    from .volume import load_volume, normalize, save_labels

    model = load_model(args.model)
    vol = normalize(load_volume(args.data))
    size = model.spec.input_size
    geom = BlockGeometry(size[0], size[1], model.spec.channels, args.stride, args.stride, 1)
    mask = score_volume(model, vol, geom, chunk=4, threads=args.threads)
    if mask.uncovered.any():
        print(f"warning: {int(mask.uncovered.sum())} samples not covered by any block",
              file=sys.stderr)
    outputs = export_mask(mask, args.out, args.csv, args.pgm_dir)
    if args.pred_labels:
        save_labels(classify(mask, args.gamma), args.pred_labels)
        outputs.append(Path(args.pred_labels))
    write_manifest(args.out, "detect", vars(args), [args.model, args.data],
                   [p for p in outputs if Path(p).suffix != ".pgm"])
    n_pos = int(classify(mask, args.gamma).sum())
    print(f"{n_pos} of {len(mask.per_bscan_max)} B-scans above gamma={args.gamma}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import confusion, roc, save_roc
    from .volume import load_labels, load_scores

    scores, labels = load_scores(args.scores), load_labels(args.labels)
    if len(scores) != len(labels):
        raise CliError(f"{len(scores)} scores but {len(labels)} labels")
    keep = np.arange(args.skip, len(scores))
    curve = roc(scores[keep], labels[keep])
    if args.roc_out:
        save_roc(curve, args.roc_out)
        write_manifest(args.roc_out, "eval", vars(args), [args.scores, args.labels], [args.roc_out])
    print(f"auc,{curve.auc!r}")
    if args.gamma is not None:
        c = confusion(scores[keep] > args.gamma, labels[keep])
        print(f"tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn} tpr={c.tpr!r} fpr={c.fpr!r}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    from . import experiment as ex
    from .synth import SceneSpec, generate_dataset, load_scene

    def scene(path):
        spec, targets, n_train = load_scene(path) if path else (SceneSpec(), None, 5)
        if args.seed is not None:
            from .synth import with_overrides

            spec = with_overrides(spec, seed=args.seed)
        return generate_dataset(spec, targets, n_train)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = dict(
        family=args.archs[0], dims=args.dims[0], block_size=args.blocks[0],
        stride=args.strides[0], n_training_bscans=args.n_values[0],
        epochs_max=args.epochs_max, max_train_blocks=args.max_blocks,
        seed=args.seed or 0, threads=args.threads,
    )
    log = (lambda row: print(row, flush=True)) if args.verbose else None
    ds = scene(args.config)
    tables = {}
    if args.sweep in ("blocks", "all"):
        grid = {"block_size": args.blocks, "stride": args.strides}
        tables["blocks"] = ex.sweep(ds, grid, log, **_without(base, grid))
    if args.sweep in ("nbscans", "all"):
        grid = {"n_training_bscans": args.n_values}
        tables["nbscans"] = ex.sweep(ds, grid, log, **_without(base, grid))
    if args.sweep in ("arch", "all"):
        grid = {"family": args.archs, "dims": args.dims}
        tables["arch"] = ex.sweep(ds, grid, log, **_without(base, grid))
    written = []
    for name, results in tables.items():
        path = out / f"auc_{name}.csv"
        ex.write_table([r.row() for r in results], path)
        written.append(path)
    if args.sweep in ("cross", "all"):
        if not args.config_b:
            raise CliError("the cross sweep needs --config-b")
        matrix = ex.cross_dataset(ds, scene(args.config_b), log, **base)
        path = out / "auc_cross.csv"
        ex.write_table([{"train": "AB"[i], "test_A": matrix[i, 0], "test_B": matrix[i, 1]}
                        for i in range(2)], path)
        written.append(path)
    inputs = [p for p in (args.config, args.config_b) if p]
    write_manifest(out / "experiment", "experiment", vars(args), inputs, written)
    for path in written:
        print(path)
    return EXIT_OK


def _without(base, grid):
    return {k: v for k, v in base.items() if k not in grid}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gprae", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gprae {__version__}")
    parser.add_argument("--threads", type=_positive_int, default=default_threads(),
                        help="worker threads (default: $GPRAE_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic H/V scene")
    p.add_argument("--config", help="scene key/value file (default scene if omitted)")
    p.add_argument("--out-h", required=True)
    p.add_argument("--out-v", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--scene-out", help="write the resolved scene file here")
    p.add_argument("--split-out", help="write the train/test split manifest here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess", help="align and fuse H and V volumes")
    p.add_argument("--h", required=True)
    p.add_argument("--v", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-lag", type=int)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train an autoencoder on background B-scans")
    p.add_argument("--data", required=True)
    p.add_argument("--labels")
    p.add_argument("--arch", choices=["a1", "a2", "a3"], default="a3")
    p.add_argument("--dims", choices=["2d", "3d"], default="3d")
    p.add_argument("--block", type=_positive_int, default=64)
    p.add_argument("--stride", type=_positive_int, default=4)
    p.add_argument("--n-bscans", type=_positive_int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs-max", type=int, default=100)
    p.add_argument("--batch-size", type=_positive_int, default=32)
    p.add_argument("--patience", type=_positive_int, default=5)
    p.add_argument("--min-delta", type=float, default=0.02)
    p.add_argument("--validation-fraction", type=float, default=0.1)
    p.add_argument("--max-blocks", type=_positive_int, default=1024,
                   help="random subset size of the training blocks")
    p.add_argument("--history", help="loss history CSV (default: <out>.history.csv)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score a volume and write the anomaly mask")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--stride", type=_positive_int, default=4)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--pgm-dir")
    p.add_argument("--pred-labels")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="ROC curve and AUC of per-B-scan scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--roc-out")
    p.add_argument("--skip", type=int, default=0, help="ignore the first N B-scans (training)")
    p.add_argument("--gamma", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="AUC sweeps on synthetic scenes")
    p.add_argument("--config")
    p.add_argument("--config-b", help="second scene for the cross sweep")
    p.add_argument("--sweep", choices=["blocks", "nbscans", "arch", "cross", "all"],
                   default="blocks")
    p.add_argument("--blocks", type=_csv_list(int), default=[64])
    p.add_argument("--strides", type=_csv_list(int), default=[4])
    p.add_argument("--n-values", type=_csv_list(int), default=[5])
    p.add_argument("--archs", type=_csv_list(str), default=["a3"])
    p.add_argument("--dims", type=_csv_list(str), default=["3d"])
    p.add_argument("--epochs-max", type=int, default=100)
    p.add_argument("--max-blocks", type=_positive_int, default=1024)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, IndexError, CliError) as exc:
        print(f"gprae {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
