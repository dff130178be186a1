"""Command-line interface: ``sphsp <command> [options]``.

Exit codes: 0 success, 1 bad input, 2 numerical failure, 3 gradient check
failure. Every command is deterministic given its arguments; the thread
count never changes any output.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import _parallel
from .augment import AugmentSpec, compose_augmentations
from .clustering import DEFAULT_SPATIAL_WEIGHT
from .features import NET_INPUTS, PADDINGS, init_feature_net, load_net, save_net, with_padding
from .geometry import GridShape
from .imageio import (
    boundary_overlay,
    read_image,
    read_labels,
    write_image,
    write_json,
    write_labels,
    write_sidecar,
)
from .metrics import NORMS, evaluate
from .objective import TrainConfig, TrainingDiverged, dataset_loss, gradient_check, train_toy
from .pipeline import MODES, mean_asa, segment
from .report import cd_at_br, plot_bench, plot_loss_trace
from .sampling import EmptySuperpixelError
from .synthetic import band_dataset

log = logging.getLogger("spherical_superpixels")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 1, 2, 3

# Arguments that never affect results and stay out of provenance records.
_NOT_CONFIG = {"func", "threads", "verbose"}
# Output locations are recorded by name so a rerun elsewhere writes identical files.
_OUTPUTS = {"output", "overlay", "csv"}

GT_SUFFIX = "_gt"
BENCH_FIELDS = ("image", "k", "asa", "br", "cd")


class InputError(ValueError):
    pass


def resolved_config(args: argparse.Namespace) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in _NOT_CONFIG:
            continue
        if isinstance(value, Path):
            value = value.name if key in _OUTPUTS else str(value)
        elif isinstance(value, tuple):
            value = list(value)
        out[key] = value
    return out


def _resize(args):
    return tuple(args.resize) if getattr(args, "resize", None) else None


def _read_image(path, resize=None):
    try:
        return read_image(path, resize)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc


def _read_labels(path, resize=None):
    try:
        return read_labels(path, resize)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read label map {path}: {exc}") from exc


def _load_layers(args):
    if not args.weights:
        return None
    try:
        layers = load_net(args.weights)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot read net weights {args.weights}: {exc}") from exc
    if args.padding:
        layers = with_padding(layers, args.padding)
    return layers


def _check_positive(name, value):
    if value < 1:
        raise InputError(f"{name} must be at least 1, got {value}")


# --- commands -------------------------------------------------------------

def cmd_segment(args) -> int:
    _check_positive("k", args.k)
    image = _read_image(args.input, _resize(args))
    if args.k > image.shape[0] * image.shape[1]:
        raise InputError("k exceeds the number of pixels")
    labels = segment(image, args.k, args.iterations, args.spatial_weight, args.mode, args.temperature,
                     _load_layers(args), args.min_size, not args.no_connectivity, args.threads)
    write_labels(args.output, labels)
    write_sidecar(args.output, {"k": args.k, "k_effective": int(len(np.unique(labels))),
                                "shape": list(labels.shape), "config": resolved_config(args)})
    if args.overlay:
        write_image(args.overlay, boundary_overlay(image, labels))
    if args.csv:
        write_labels(args.csv, labels)
    log.info("wrote %s (%d superpixels)", args.output, len(np.unique(labels)))
    return EXIT_OK


def cmd_eval(args) -> int:
    s = _read_labels(args.labels)
    g = _read_labels(args.gt)
    if s.shape != g.shape:
        raise InputError(f"shape mismatch: labels {s.shape} vs ground truth {g.shape}")
    report = evaluate(s, g, args.epsilon, args.norm)
    payload = report.to_dict() | {"norm": args.norm, "config": resolved_config(args)}
    if args.output:
        write_json(args.output, payload)
    print(f"asa={report.asa:.6f} br={report.br:.6f} cd={report.cd:.6f} k_effective={report.k_effective}")
    return EXIT_OK


def cmd_augment(args) -> int:
    image = _read_image(args.image)
    labels = _read_labels(args.labels)
    if labels.shape != image.shape[:2]:
        raise InputError("image and label map differ in size")
    if args.spec:
        try:
            spec = AugmentSpec.from_json(Path(args.spec).read_text())
        except (OSError, ValueError, TypeError) as exc:
            raise InputError(f"cannot read augmentation spec {args.spec}: {exc}") from exc
    else:
        spec = AugmentSpec.random(np.random.default_rng(args.seed), image.shape[1])
    image, labels = compose_augmentations(spec, image, labels)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_image(out / "image.png", image)
    write_labels(out / "labels.png", labels)
    (out / "spec.json").write_text(spec.to_json())
    write_sidecar(out / "labels.png", {"shape": list(labels.shape), "spec": spec.__dict__,
                                        "config": resolved_config(args)})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    result = gradient_check(seed=args.seed, k=args.k, iterations=args.iterations, n_coords=args.coords,
                            step=args.step, lam=args.lam, spatial_weight=args.spatial_weight,
                            temperature=args.temperature, tolerance=args.tolerance, corrupt=args.corrupt)
    result["config"] = resolved_config(args)
    if args.output:
        write_json(args.output, result)
    status = "PASS" if result["passed"] else "FAIL"
    print(f"gradcheck {status}: max relative error {result['max_rel_error']:.3e} (tolerance {args.tolerance:g})")
    return EXIT_OK if result["passed"] else EXIT_GRADCHECK


def _dataset_from_dir(directory):
    pairs = []
    for image_path, gt_path in _paired_files(directory):
        pairs.append((_read_image(image_path), _read_labels(gt_path)))
    if not pairs:
        raise InputError(f"no image/ground-truth pairs in {directory}")
    return pairs


def cmd_train_toy(args) -> int:
    if args.data:
        data = _dataset_from_dir(args.data)
    else:
        data = band_dataset(args.count, GridShape(args.height, args.width), args.nlat, args.nlon, args.noise,
                            args.seed)
    if not 0 < args.held_out < len(data):
        raise InputError("held-out count must leave at least one training image")
    train, held = data[:-args.held_out], data[-args.held_out:]
    n_classes = max(int(g.max()) for _, g in data) + 1
    cfg = TrainConfig(k=args.k, iterations=args.iterations, temperature=args.temperature, lam=args.lam,
                      spatial_weight=args.spatial_weight, n_classes=n_classes)
    in_channels = {v: k for k, v in NET_INPUTS.items()}[args.net_input]
    layers = init_feature_net(args.seed, widths=(in_channels, *args.widths), padding=args.padding)

    loss_before = dataset_loss(train, layers, cfg)
    result = train_toy(train, layers, args.steps, args.lr, cfg)
    loss_after = dataset_loss(train, result.layers, cfg)

    asa_kwargs = dict(k=args.k, iterations=args.hard_iterations, spatial_weight=args.spatial_weight,
                      threads=args.threads)
    asa_base = mean_asa(held, None, **asa_kwargs)
    asa_trained = mean_asa(held, result.layers, **asa_kwargs)

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_net(out / "weights.json", result.layers)
    with open(out / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "l_seg", "l_compact", "total"])
        for step, seg, comp, total in result.trace:
            writer.writerow([step, repr(seg), repr(comp), repr(total)])
    plot_loss_trace(result.trace, out / "loss.png")
    report = {
        "train_images": len(train),
        "held_out_images": len(held),
        "dataset_loss_initial": loss_before,
        "dataset_loss_final": loss_after,
        "held_out_asa_untrained": asa_base,
        "held_out_asa_trained": asa_trained,
        "asa_delta": asa_trained - asa_base,
        "config": resolved_config(args),
    }
    write_json(out / "report.json", report)
    print(f"loss {loss_before:.6f} -> {loss_after:.6f}; held-out ASA {asa_base:.4f} -> {asa_trained:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    data = band_dataset(args.count, GridShape(args.height, args.width), args.nlat, args.nlon, args.noise, args.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for n, (image, gt) in enumerate(data):
        write_image(out / f"synth_{n:04d}.png", image)
        gt_path = out / f"synth_{n:04d}{GT_SUFFIX}.png"
        write_labels(gt_path, gt)
        write_sidecar(gt_path, {"index": n, "shape": list(gt.shape), "classes": args.nlat * args.nlon,
                                "config": resolved_config(args)})
    return EXIT_OK


def _paired_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"{directory} is not a directory")
    pairs = []
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in (".png", ".ppm") or path.stem.endswith(GT_SUFFIX):
            continue
        for ext in (".png", ".csv"):
            gt = path.with_name(path.stem + GT_SUFFIX + ext)
            if gt.exists():
                pairs.append((path, gt))
                break
    return pairs


def cmd_bench(args) -> int:
    pairs = _paired_files(args.input)
    if not pairs:
        raise InputError(f"no image/ground-truth pairs in {args.input}")
    for k in args.k:
        _check_positive("k", k)
    layers = _load_layers(args)
    records = []
    for image_path, gt_path in pairs:
        image = _read_image(image_path, _resize(args))
        gt = _read_labels(gt_path, _resize(args))
        if gt.shape != image.shape[:2]:
            raise InputError(f"{gt_path} does not match {image_path} in size")
        for k in args.k:
            labels = segment(image, k, args.iterations, args.spatial_weight, args.mode, args.temperature, layers,
                             threads=args.threads)
            rep = evaluate(labels, gt, args.epsilon, args.norm)
            records.append({"image": image_path.name, "k": k, "asa": rep.asa, "br": rep.br, "cd": rep.cd})
            log.info("%s K=%d asa=%.4f br=%.4f cd=%.4f", image_path.name, k, rep.asa, rep.br, rep.cd)

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        writer.writeheader()
        for r in records:
            writer.writerow({key: (repr(v) if isinstance(v, float) else v) for key, v in r.items()})
    plot_bench(records, out)
    cd = cd_at_br(records, args.target_br)
    write_sidecar(out / "bench.csv", {"records": len(records), "target_br": args.target_br, "cd_at_target_br": cd,
                                      "config": resolved_config(args)})
    print(f"{len(records)} records; CD at BR={args.target_br:g}: {'n/a' if cd is None else f'{cd:.6f}'}")
    return EXIT_OK


# --- parser ---------------------------------------------------------------

def _add_cluster_args(p):
    p.add_argument("--iterations", "-T", type=int, default=None,
                   help="clustering iterations (default 10 hard, 3 soft)")
    p.add_argument("--spatial-weight", "-m", type=float, default=DEFAULT_SPATIAL_WEIGHT)
    p.add_argument("--mode", choices=MODES, default="hard")
    p.add_argument("--temperature", type=float, default=1.0, help="soft-assignment temperature")
    p.add_argument("--weights", type=Path, help="net weights JSON (from train-toy)")
    p.add_argument("--padding", choices=PADDINGS, help="override the padding stored with the weights")
    p.add_argument("--resize", type=int, nargs=2, metavar=("H", "W"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sphsp", description="Spherical superpixels for 360° images.")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: one per CPU)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="segment an equirectangular image")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True, help="16-bit PNG label map")
    p.add_argument("-k", "--k", type=int, default=500)
    _add_cluster_args(p)
    p.add_argument("--min-size", type=float, default=None, help="smallest kept component (default N/(4K))")
    p.add_argument("--no-connectivity", action="store_true")
    p.add_argument("--overlay", type=Path, help="RGB image with superpixel boundaries drawn")
    p.add_argument("--csv", type=Path, help="also export the label map as CSV")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="score a label map against ground truth")
    p.add_argument("labels", type=Path)
    p.add_argument("gt", type=Path)
    p.add_argument("--epsilon", type=float, default=2.0, help="boundary recall tolerance in pixels")
    p.add_argument("--norm", choices=NORMS, default="euclidean")
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("augment", help="apply a 360°-preserving augmentation")
    p.add_argument("image", type=Path)
    p.add_argument("labels", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True, help="output directory")
    p.add_argument("--spec", type=Path, help="augmentation spec JSON; drawn from --seed if absent")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("gradcheck", help="check analytic loss gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-k", "--k", type=int, default=8)
    p.add_argument("--iterations", "-T", type=int, default=3)
    p.add_argument("--coords", type=int, default=100)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--spatial-weight", "-m", type=float, default=DEFAULT_SPATIAL_WEIGHT)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--corrupt", type=float, default=0.0, help=argparse.SUPPRESS)
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-toy", help="train the feature net on synthetic band images")
    p.add_argument("-o", "--output", type=Path, required=True, help="output directory")
    p.add_argument("--data", type=Path, help="directory of image/_gt pairs instead of synthetic data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.3)
    p.add_argument("-k", "--k", type=int, default=50)
    p.add_argument("--iterations", "-T", type=int, default=3, help="soft clustering iterations")
    p.add_argument("--hard-iterations", type=int, default=10, help="iterations for the held-out ASA runs")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--spatial-weight", "-m", type=float, default=DEFAULT_SPATIAL_WEIGHT)
    p.add_argument("--padding", choices=PADDINGS, default="circular")
    p.add_argument("--net-input", choices=sorted(NET_INPUTS.values()), default="lab+xyz",
                   help="channels fed to the net; lab alone keeps it exactly roll-equivariant")
    p.add_argument("--widths", type=int, nargs="+", default=[16, 14], help="output channels per conv layer")
    p.add_argument("--count", type=int, default=25)
    p.add_argument("--held-out", type=int, default=5)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--nlat", type=int, default=2)
    p.add_argument("--nlon", type=int, default=3)
    p.add_argument("--noise", type=float, default=10.0)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("synth", help="write synthetic band images with ground truth")
    p.add_argument("-o", "--output", type=Path, required=True, help="output directory")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--nlat", type=int, default=2)
    p.add_argument("--nlon", type=int, default=3)
    p.add_argument("--noise", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser(
        "bench", help="segment and score every image in a directory for several K",
        description="Writes bench.csv with one (image, K, ASA, BR, CD) row per run, asa_vs_k.png and "
                    "cd_vs_br.png. The CD at the target BR is interpolated linearly between the two "
                    "consecutive K values whose image-averaged BR brackets the target.")
    p.add_argument("input", type=Path, help="directory with NAME.png and NAME_gt.png (or NAME_gt.csv)")
    p.add_argument("-o", "--output", type=Path, required=True, help="output directory")
    p.add_argument("-k", "--k", type=int, nargs="+", default=[200, 400, 600, 800, 1000])
    _add_cluster_args(p)
    p.add_argument("--epsilon", type=float, default=2.0)
    p.add_argument("--norm", choices=NORMS, default="euclidean")
    p.add_argument("--target-br", type=float, default=0.8)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    _parallel.set_threads(args.threads)
    try:
        return args.func(args)
    except (TrainingDiverged, EmptySuperpixelError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
