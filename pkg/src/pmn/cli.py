"""Command-line entry point: ``pmn <subcommand> ...``.

Dataset layout read and written by the subcommands::

    <root>/<sequence>/rgb/00000.ppm ...
    <root>/<sequence>/flow/00000.ppm ...   (one fewer than rgb is allowed)
    <root>/<sequence>/gt/00000.pgm ...     (optional)

A directory that itself contains ``rgb/`` is treated as a single sequence.
Exit codes: 0 success, 2 bad arguments or configuration, 3 data/format error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import container
from .config import PRESETS, load_config, parameter_count
from .errors import ConfigurationError, ParameterError, PMNError
from .metrics import metrics_csv, sequence_metrics
from .netpbm import read_image, read_pnm, write_pgm, write_ppm
from .pipeline import FrameRecord, new_state, prepare_frame, forward_prepared, frames_from_arrays, sweep_k
from .slic import slic_segment
from .synth import occlusion_scene, toy_scene
from .weights import init_weights, load_weights, save_weights

EXIT_OK, EXIT_ARGS, EXIT_DATA = 0, 2, 3

log = logging.getLogger("pmn")


class UsageError(Exception):
    pass


def _list(directory: Path, suffix: str) -> list[Path]:
    if not directory.is_dir():
        return []
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == suffix)


def sequence_dirs(root: Path) -> list[Path]:
    root = Path(root)
    if (root / "rgb").is_dir():
        return [root]
    seqs = sorted(p for p in root.iterdir() if (p / "rgb").is_dir()) if root.is_dir() else []
    if not seqs:
        raise UsageError(f"{root}: no sequence directories with an rgb/ folder")
    return seqs


def read_sequence(seq: Path) -> list[FrameRecord]:
    rgb = [read_image(p) for p in _list(seq / "rgb", ".ppm")]
    if not rgb:
        raise UsageError(f"{seq}: rgb/ holds no .ppm frames")
    flow = [read_image(p) for p in _list(seq / "flow", ".ppm")]
    gt_paths = _list(seq / "gt", ".pgm")
    gt = None
    if gt_paths:
        if len(gt_paths) != len(rgb):
            raise ParameterError(f"{seq}: {len(rgb)} frames but {len(gt_paths)} ground-truth masks")
        gt = [read_image(p) >= 0.5 for p in gt_paths]
    return frames_from_arrays(rgb, flow, gt)


def write_sequence(seq_dir: Path, rgb, flow, gt=None) -> None:
    for sub in ("rgb", "flow", "gt"):
        (seq_dir / sub).mkdir(parents=True, exist_ok=True)
    for t, img in enumerate(rgb):
        write_ppm(seq_dir / "rgb" / f"{t:05d}.ppm", img)
    for t, img in enumerate(flow):
        write_ppm(seq_dir / "flow" / f"{t:05d}.ppm", img)
    for t, m in enumerate(gt or []):
        write_pgm(seq_dir / "gt" / f"{t:05d}.pgm", np.where(m, 255, 0).astype(np.uint8))


def _config(args):
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return load_config(args.config, args.preset, overrides)


def _weights(args, config):
    if getattr(args, "weights", None):
        return load_weights(args.weights, config.heads)
    return init_weights(config, args.seed)


def _overlay(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = image.copy()
    out[mask] = 0.5 * out[mask] + 0.5 * np.array([1.0, 0.0, 0.0])
    return out


def cmd_segment(args) -> int:
    config = _config(args)
    weights = _weights(args, config)
    out_root = Path(args.out)
    records = {}
    for seq in sequence_dirs(Path(args.data)):
        frames = read_sequence(seq)
        dest = out_root / seq.name
        dest.mkdir(parents=True, exist_ok=True)
        state, last_flow, masks = new_state(config, seq.name), None, []
        for frame in frames:
            inputs = prepare_frame(frame, config, None, last_flow)
            last_flow = frame.flow if frame.flow is not None else last_flow
            mask, state, taus = forward_prepared(state, inputs, weights, config, frame.index)
            masks.append(mask)
            t = frame.index
            if args.binary:
                write_pgm(dest / f"{t:05d}.pgm", np.where(mask.binary(), 255, 0).astype(np.uint8))
            else:
                write_pgm(dest / f"{t:05d}.pgm", mask.to_uint8())
            if args.overlay:
                write_ppm(dest / f"{t:05d}_overlay.ppm", _overlay(frame.rgb, mask.binary()))
            if args.dump_tau:
                tensors = {f"{s}.tau{r + 1}": taus[s].tau[r] for s in taus for r in range(3)}
                container.save(dest / f"{t:05d}_tau.pmnt", tensors)
        if all(f.gt is not None for f in frames):
            records[seq.name] = sequence_metrics([(m.values, f.gt) for m, f in zip(masks, frames)])
        log.info("%s: %d frames", seq.name, len(frames))
    if records:
        text = metrics_csv(records)
        (out_root / "metrics.csv").write_text(text)
        sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    records = {}
    for seq in sequence_dirs(Path(args.gt)):
        gt_paths = _list(seq / "gt", ".pgm")
        if not gt_paths:
            raise UsageError(f"{seq}: no ground-truth masks")
        pred_dir = Path(args.pred) / seq.name
        if not pred_dir.is_dir() and Path(args.pred).is_dir() and len(sequence_dirs(Path(args.gt))) == 1:
            pred_dir = Path(args.pred)
        pairs = []
        for g in gt_paths:
            p = pred_dir / g.name
            if not p.exists():
                raise ParameterError(f"missing prediction {p}")
            pairs.append((read_image(p), read_image(g) >= 0.5))
        records[seq.name] = sequence_metrics(pairs, args.threshold)
    text = metrics_csv(records)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    scene = {"toy": toy_scene, "occlusion": occlusion_scene}[args.scene]
    seq = scene(size=args.size, frames=args.frames, seed=args.seed)
    write_sequence(Path(args.out) / seq.name, seq.rgb, seq.flow, seq.gt)
    print(Path(args.out) / seq.name)
    return EXIT_OK


def cmd_sweep_k(args) -> int:
    config = _config(args)
    weights = _weights(args, config)
    try:
        ks = [int(k) for k in args.k.split(",") if k.strip()]
    except ValueError:
        raise ConfigurationError(f"--k expects comma-separated integers, got {args.k!r}") from None
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["sequence", "K", "J", "F", "JF"])
    for seq in sequence_dirs(Path(args.data)):
        for row in sweep_k(read_sequence(seq), weights, config, ks):
            writer.writerow([seq.name, row["k"], f"{row['j']:.6f}", f"{row['f']:.6f}", f"{row['jf']:.6f}"])
    return EXIT_OK


def _boundaries(labels: np.ndarray) -> np.ndarray:
    edge = np.zeros(labels.shape, dtype=bool)
    edge[:-1] |= labels[:-1] != labels[1:]
    edge[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    return edge


def cmd_superpixels(args) -> int:
    arr, maxval = read_pnm(args.image)
    if arr.ndim != 3:
        raise UsageError(f"{args.image}: superpixels need a color (P6) image")
    image = arr.astype(np.float64) / maxval
    sp = slic_segment(image, args.n, args.compactness, args.iters, workers=args.workers)
    if sp.count > 65536:
        raise ParameterError(f"{sp.count} labels do not fit a 16-bit map")
    write_pgm(args.labels, sp.labels.astype(np.uint16))
    if args.overlay:
        over = image.copy()
        over[_boundaries(sp.labels)] = (1.0, 1.0, 0.0)
        write_ppm(args.overlay, over)
    print(sp.count)
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .fd_trainer import train_toy

    config = _config(args)
    if args.data:
        seqs = sequence_dirs(Path(args.data))
        frames = read_sequence(seqs[0])
    else:
        seq = toy_scene(size=config.height)
        frames = frames_from_arrays(seq.rgb, seq.flow, seq.gt)
    log.info("training %d parameters", parameter_count(config))
    result = train_toy(
        frames, config, steps=args.steps, lr=args.lr, seed=args.seed,
        max_grad_norm=args.clip if args.clip > 0 else None,
        callback=lambda s, v: log.info("step %d loss %.6f", s, v),
    )
    with open(args.trace, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss"])
        for step, value in enumerate(result.trace):
            writer.writerow([step, f"{value:.8f}"])
    save_weights(args.weights_out, result.weights)
    print(f"initial {result.trace[0]:.6f} final {result.trace[-1]:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    common.add_argument("--config", help="file of 'key = value' lines")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    common.add_argument("--seed", type=int, default=0, help="weight-initialization seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pmn", description="Prototype-memory video object segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", parents=[common], help="segment sequences and write masks")
    p.add_argument("data")
    p.add_argument("--out", required=True)
    p.add_argument("--weights")
    p.add_argument("--binary", action="store_true", help="write 0/255 masks instead of soft masks")
    p.add_argument("--overlay", action="store_true", help="also write overlay PPMs")
    p.add_argument("--dump-tau", action="store_true", help="write correlation maps as containers")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", parents=[common], help="score predicted masks against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--out")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic sequence")
    p.add_argument("out")
    p.add_argument("--scene", choices=("toy", "occlusion"), default="toy")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--frames", type=int, default=10)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep-k", parents=[common], help="J&F for several memory sizes")
    p.add_argument("data")
    p.add_argument("--k", default="0,2,6,12")
    p.add_argument("--weights")
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("superpixels", parents=[common], help="SLIC label map of one image")
    p.add_argument("image")
    p.add_argument("--labels", required=True, help="16-bit PGM label map")
    p.add_argument("--overlay", help="PPM with superpixel boundaries drawn")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--compactness", type=float, default=10.0)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_superpixels)

    p = sub.add_parser("train-toy", parents=[common], help="finite-difference training on a small scene")
    p.add_argument("--data", help="sequence directory (default: built-in toy scene)")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--clip", type=float, default=1.0, help="gradient-norm cap; 0 disables")
    p.add_argument("--trace", default="loss_trace.csv")
    p.add_argument("--weights-out", default="weights.pmnt")
    p.set_defaults(func=cmd_train_toy, preset="toy")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_ARGS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, ParameterError) as exc:
        print(f"pmn {args.command}: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (PMNError, OSError) as exc:
        print(f"pmn {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
