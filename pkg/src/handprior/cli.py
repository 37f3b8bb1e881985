"""Command-line entry points.

Commands:
    gen-synthetic   write synthetic correlated pose files for testing
    train           fit the generator (and discriminator) on a directory of pose files
    synthesize      predict hands for a body pose file using a checkpoint
    evaluate        Procrustes-aligned mm error report, optionally with baselines
    render          draw pose files as stick-figure BMP frames

All randomness flows from the global --seed flag; every command is
deterministic given its flags.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch

from . import baselines as bl
from . import data as dt
from . import evaluation as ev
from . import kinematics as kin
from . import model as mdl
from . import render as rnd
from . import training as tr

POSE_SUFFIX = ".pose"


def _load_dir(path: Path) -> list[tuple[Path, dt.PoseSequence]]:
    files = sorted(path.glob(f"*{POSE_SUFFIX}"))
    return [(f, dt.load_sequence(f)) for f in files]


def _resolve_tree(arg: str | None) -> kin.KinematicTree:
    return kin.load_tree(arg) if arg else kin.default_tree()


def _merge_config(cls, file_values: dict, flag_values: dict, rename: dict | None = None):
    """dataclass defaults <- config file <- explicitly passed flags."""
    rename = rename or {}
    known = {f.name: f.type for f in fields(cls)}
    merged = {}
    for key, raw in file_values.items():
        key = rename.get(key, key)
        if key not in known:
            continue
        typ = {"int": int, "float": float, "str": str}.get(known[key], str)
        if "int" in str(known[key]):
            typ = int
        elif "float" in str(known[key]):
            typ = float
        merged[key] = typ(raw)
    for key, value in flag_values.items():
        if key in known and value is not None:
            merged[key] = value
    return merged


def cmd_gen_synthetic(args) -> int:
    out_dir = Path(args.out)
    if args.n == 0:
        print("gen-synthetic: n=0, nothing to write")
        return 0
    out_dir.mkdir(parents=True, exist_ok=True)
    seqs = dt.generate_synthetic(
        args.n,
        args.frames,
        seed=args.seed,
        noise=args.noise,
        fps=args.fps,
        feat_dim=args.feat_dim,
        with_clarity=args.with_clarity,
    )
    for seq in seqs:
        dt.save_sequence(seq, out_dir / f"{seq.id}{POSE_SUFFIX}")
    print(f"gen-synthetic: wrote {len(seqs)} sequence(s) of {args.frames} frames to {out_dir}")
    return 0


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    loaded = _load_dir(data_dir)
    if not loaded:
        print(f"train: no {POSE_SUFFIX} files in {data_dir}", file=sys.stderr)
        return 2

    file_values = tr.parse_config_file(args.config) if args.config else {}
    flag_values = {k: getattr(args, k, None) for k in (
        "batch_size", "learning_rate", "epochs", "l1_weight", "adversarial_period",
        "beta1", "beta2", "window", "body_embed", "dyn_embed", "image_embed",
        "unet_depth", "kernel_size",
    )}
    flag_values["seed"] = args.seed

    feat_dim = 0
    if args.image_features:
        for path, seq in loaded:
            if seq.feat_dim == 0:
                print(f"train: --image-features requested but {path} has no feature columns",
                      file=sys.stderr)
                return 2
        widths = {seq.feat_dim for _, seq in loaded}
        if len(widths) != 1:
            print(f"train: inconsistent image-feature widths across files: {sorted(widths)}",
                  file=sys.stderr)
            return 2
        feat_dim = widths.pop()

    train_kwargs = _merge_config(tr.TrainingConfig, file_values, flag_values)
    train_kwargs["checkpoint_dir"] = args.out
    train_cfg = tr.TrainingConfig(**train_kwargs)
    gen_kwargs = _merge_config(mdl.GeneratorConfig, file_values, flag_values)
    gen_kwargs["feat_dim"] = feat_dim
    gen_cfg = mdl.GeneratorConfig(**gen_kwargs)

    windows = []
    for _, seq in loaded:
        windows.extend(dt.make_windows(seq, size=gen_cfg.window, overlap=gen_cfg.window // 2))
    if not windows:
        print(f"train: no usable windows (all sequences shorter than {gen_cfg.window} frames)",
              file=sys.stderr)
        return 2
    train_windows, val_windows = dt.split_train_val(windows, ratio=args.val_ratio, seed=train_cfg.seed)

    torch.manual_seed(train_cfg.seed)
    model = mdl.HandGenerator(gen_cfg)
    disc = None if args.no_gan else mdl.DeltaDiscriminator(gen_cfg.hand_dim)

    print(f"train: {len(train_windows)} train / {len(val_windows)} val windows, "
          f"batch={train_cfg.batch_size} lr={train_cfg.learning_rate} epochs={train_cfg.epochs}")
    _, _, log = tr.train(model, disc, train_windows, val_windows, train_cfg)
    out_dir = Path(args.out)
    log.write(out_dir / "train_log.txt")
    print(f"train: wrote checkpoints and log to {out_dir}")
    return 0


def cmd_synthesize(args) -> int:
    model, _ = mdl.load_checkpoint(args.checkpoint)
    seq = dt.load_sequence(args.poses)
    feats = None
    if model.config.has_image_pathway:
        if seq.image_feats is None:
            print(f"synthesize: checkpoint expects image features but {args.poses} has none",
                  file=sys.stderr)
            return 2
        if seq.feat_dim != model.config.feat_dim:
            print(f"synthesize: checkpoint expects {model.config.feat_dim}-wide image features "
                  f"but {args.poses} has {seq.feat_dim}", file=sys.stderr)
            return 2
        feats = seq.image_feats
    hands = mdl.synthesize_long(model, seq.body, feats)
    out_seq = dt.PoseSequence(seq.id, seq.fps, seq.body, hands, seq.image_feats, seq.clarity)
    dt.save_sequence(out_seq, args.out)
    print(f"synthesize: wrote {out_seq.num_frames} frames to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    tree = _resolve_tree(args.tree)
    gt = [seq for _, seq in _load_dir(Path(args.gt))]
    if not gt:
        print(f"evaluate: no ground-truth {POSE_SUFFIX} files in {args.gt}", file=sys.stderr)
        return 2
    preds = {seq.id: seq for _, seq in _load_dir(Path(args.pred))}
    missing = [s.id for s in gt if s.id not in preds]
    if missing:
        print(f"evaluate: missing predictions for sequence(s): {missing}", file=sys.stderr)
        return 2

    methods: dict[str, dict[str, np.ndarray]] = {
        "model": {s.id: preds[s.id].hands for s in gt}
    }
    if args.baselines:
        if not args.train_data:
            print("evaluate: --baselines needs --train-data for the NN segment database",
                  file=sys.stderr)
            return 2
        train_seqs = [seq for _, seq in _load_dir(Path(args.train_data))]
        windows = []
        for seq in train_seqs:
            windows.extend(dt.make_windows(seq))
        db = bl.build_segment_db(windows, segment_len=args.segment_len)
        ref_frames = np.concatenate([s.hands for s in gt], axis=0)
        methods["nn"] = {s.id: bl.nn_predict(s.body, db) for s in gt}
        methods["median"] = {s.id: bl.median_predict(ref_frames, s.num_frames) for s in gt}

    report = ev.evaluate(methods, gt, tree)
    report.write(args.out)
    print(report.format(), end="")
    print(f"evaluate: wrote report to {args.out}")
    return 0


def cmd_render(args) -> int:
    tree = _resolve_tree(args.tree)
    try:
        seq = dt.load_sequence(args.poses)
    except dt.EmptySequenceError:
        print("render: sequence has no frames, nothing to draw")
        return 0
    config = rnd.RenderConfig(image_size=args.size, plane=args.plane, stroke_width=args.stroke)
    positions = kin.forward_kinematics(tree, seq.body, seq.hands)
    images = rnd.render_sequence(positions, tree.parents, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        rnd.write_bmp(img, out_dir / f"frame_{i:06d}.bmp")
    print(f"render: wrote {len(images)} frame(s) to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="handprior",
        description="Body-motion prior for 3D hand gestures: synthesis, baselines, evaluation.",
    )
    parser.add_argument("--seed", type=int, default=0, help="seed for all randomness (default: 0)")
    parser.add_argument("--config", default=None, help="key=value config file (train)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write synthetic correlated pose files")
    p.add_argument("--n", type=int, required=True, help="number of sequences")
    p.add_argument("--frames", type=int, default=256, help="frames per sequence (default: 256)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--noise", type=float, default=0.0, help="hand noise std (default: 0)")
    p.add_argument("--fps", type=float, default=30.0, help="frames per second (default: 30)")
    p.add_argument("--feat-dim", type=int, default=0, dest="feat_dim",
                   help="synthetic image-feature width, 0 = none (default: 0)")
    p.add_argument("--with-clarity", action="store_true", dest="with_clarity",
                   help="attach per-frame clarity flags")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train the hand generator on a directory of pose files")
    p.add_argument("--data", required=True, help="directory of pose files")
    p.add_argument("--out", required=True, help="output directory for checkpoints and log")
    p.add_argument("--batch-size", type=int, dest="batch_size", help="batch size (default: 128)")
    p.add_argument("--lr", type=float, dest="learning_rate", help="learning rate (default: 1e-4)")
    p.add_argument("--epochs", type=int, help="training epochs (default: 200)")
    p.add_argument("--l1-weight", type=float, dest="l1_weight",
                   help="L1 weight in the full objective (default: 50.0)")
    p.add_argument("--adv-period", type=int, dest="adversarial_period",
                   help="adversarial loss every n-th epoch (default: 3)")
    p.add_argument("--beta1", type=float, help="Adam beta1 (default: 0.9)")
    p.add_argument("--beta2", type=float, help="Adam beta2 (default: 0.999)")
    p.add_argument("--window", type=int, help="training window length (default: 64)")
    p.add_argument("--body-embed", type=int, dest="body_embed", help="body embedding width (default: 256)")
    p.add_argument("--dyn-embed", type=int, dest="dyn_embed", help="dynamics width (default: 256)")
    p.add_argument("--image-embed", type=int, dest="image_embed", help="image embedding width (default: 256)")
    p.add_argument("--depth", type=int, dest="unet_depth", help="UNet depth (default: 4)")
    p.add_argument("--kernel", type=int, dest="kernel_size", help="conv kernel size (default: 3)")
    p.add_argument("--val-ratio", type=float, default=0.7, dest="val_ratio",
                   help="train share of the sequence-level split (default: 0.7)")
    p.add_argument("--image-features", action="store_true", dest="image_features",
                   help="condition on the pose files' image-feature columns")
    p.add_argument("--no-gan", action="store_true", dest="no_gan",
                   help="train without the adversarial loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", help="predict hands for a body pose file")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--poses", required=True, help="input pose file (body is used)")
    p.add_argument("--out", required=True, help="output pose file with predicted hands")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="Procrustes-aligned mm error report")
    p.add_argument("--pred", required=True, help="directory of predicted pose files")
    p.add_argument("--gt", required=True, help="directory of ground-truth pose files")
    p.add_argument("--tree", default=None, help="kinematic tree file (default: bundled skeleton)")
    p.add_argument("--out", required=True, help="report output path")
    p.add_argument("--baselines", action="store_true", help="also score NN and median baselines")
    p.add_argument("--train-data", dest="train_data", default=None,
                   help="training pose files for the NN segment database")
    p.add_argument("--segment-len", type=int, default=bl.SEGMENT_LEN, dest="segment_len",
                   help="NN sub-segment length (default: 8)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="draw a pose file as stick-figure BMP frames")
    p.add_argument("--poses", required=True, help="pose file to draw")
    p.add_argument("--tree", default=None, help="kinematic tree file (default: bundled skeleton)")
    p.add_argument("--out", required=True, help="output directory for frames")
    p.add_argument("--size", type=int, default=256, help="image size in pixels (default: 256)")
    p.add_argument("--plane", default="xy", choices=sorted(rnd._PLANES),
                   help="orthographic projection plane (default: xy)")
    p.add_argument("--stroke", type=int, default=2, help="stroke width in pixels (default: 2)")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    np.random.seed(args.seed % 2**32)
    try:
        return args.func(args)
    except (ValueError, OSError, tr.TrainingDiverged) as e:
        print(f"{args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
