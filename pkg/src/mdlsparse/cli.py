"""Command-line interface: learn, encode, denoise, segment, stats.

Reports are line-oriented key=value pairs on stdout; with --report-dir the
same lines land in report.txt next to rendered PNG figures. All commands are
deterministic for a fixed --seed. Exit codes: 0 success, 1 usage error,
2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .codelen import CodelengthModel, dictionary_codelength, markov_fit
from .coding import encode_columns, encode_grid_batch
from .core import extract_patches, psnr
from .learning import LearnConfig, learn_dictionary
from .modelfile import ModelFile, load_model, save_model
from .pgm import read_pgm, write_pgm
from .pipelines import (
    compression_stats,
    denoise_image_paired,
    segment_textures,
    tile_columns,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _threads() -> int:
    raw = os.environ.get("MDLSPARSE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"MDLSPARSE_THREADS must be an integer, got {raw!r}")


def _add_learn_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pmax", type=int, default=64, help="initial dictionary size")
    p.add_argument("--patch", type=int, default=8, help="patch side w")
    p.add_argument("--delta-a", type=float, default=0.5, help="coefficient quantization step")
    p.add_argument("--tol", type=float, default=1e-3, help="relative codelength convergence")
    p.add_argument("--seed", type=int, default=0, help="RNG seed")
    p.add_argument("--iters", type=int, default=10, help="max outer iterations")
    p.add_argument(
        "--train-patches", type=int, default=3000, help="training subsample cap (0 = all)"
    )
    p.add_argument("--loss", choices=("huber", "l2"), default="huber", help="dictionary loss")
    p.add_argument("--no-prune", action="store_true", help="skip the atom-pruning stage")


def _config(args) -> LearnConfig:
    return LearnConfig(
        p_max=args.pmax,
        max_outer_iters=args.iters,
        convergence_tol=args.tol,
        seed=args.seed,
        loss=args.loss,
        max_train_patches=None if args.train_patches == 0 else args.train_patches,
        prune=not args.no_prune,
    )


class Report:
    """Collects key=value lines; optionally mirrors them to a report directory."""

    def __init__(self, report_dir: str | None):
        self.lines: list[str] = []
        self.dir = Path(report_dir) if report_dir else None
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def add(self, key: str, value) -> None:
        if isinstance(value, float):
            value = f"{value:.6f}"
        self.lines.append(f"{key}={value}")

    def path(self, name: str) -> Path | None:
        return self.dir / name if self.dir else None

    def emit(self) -> None:
        text = "\n".join(self.lines)
        print(text)
        if self.dir:
            (self.dir / "report.txt").write_text(text + "\n")


def _load_images(paths) -> list[np.ndarray]:
    return [read_pgm(p).astype(np.float64) for p in paths]


def _scale_labels(labels: np.ndarray, classes: int) -> np.ndarray:
    return labels * (255 // max(classes - 1, 1))


def _unscale_labels(gray: np.ndarray, classes: int) -> np.ndarray:
    return np.rint(gray.astype(np.float64) * (classes - 1) / 255.0).astype(np.int64)


def cmd_learn(args) -> int:
    report = Report(args.report_dir)
    images = _load_images(args.images)
    grids = [extract_patches(img, args.patch) for img in images]
    train = np.concatenate([g.data for g in grids], axis=1)
    config = _config(args)
    n_train = train.shape[1]
    if config.max_train_patches is not None:
        n_train = min(n_train, config.max_train_patches)

    model = CodelengthModel.create(
        args.patch * args.patch,
        config.p_max,
        n_train,
        delta_a=args.delta_a,
        sigma2=args.sigma * args.sigma,
    )
    dictionary, history = learn_dictionary(train, config, model)
    for i, avg in enumerate(history, 1):
        report.add(f"history_{i}", avg)
    report.add("iterations", len(history))
    report.add("atom_count", dictionary.atom_count)
    report.add("avg_bits_patch", history[-1])

    markov = None
    if args.markov:
        passes = [(encode_grid_batch(g, dictionary, model).supports, g) for g in grids]
        markov = markov_fit(passes)
    save_model(args.output, ModelFile.build(args.patch, dictionary, model, markov))
    report.add("model", args.output)
    report.emit()

    if report.dir:
        from .reports import save_dictionary_mosaic, save_learning_curve

        save_learning_curve(history, report.path("learning_curve.png"))
        save_dictionary_mosaic(dictionary, args.patch, report.path("dictionary.png"))
    return 0


def cmd_encode(args) -> int:
    report = Report(args.report_dir)
    mf = load_model(args.model)
    image = read_pgm(args.image).astype(np.float64)
    side = mf.patch_side
    if image.shape[0] < side or image.shape[1] < side:
        raise UsageError(
            f"image {image.shape} is smaller than the model patch side {side}"
        )
    model = mf.codelength_model()
    grid = extract_patches(image, side)
    if args.markov:
        if mf.markov is None:
            raise UsageError("model file carries no Markov tables; re-learn with --markov")
        enc = encode_grid_batch(grid, mf.dictionary, model, mf.markov)
    else:
        enc = encode_grid_batch(grid, mf.dictionary, model, threads=_threads())

    tiles = tile_columns(image, side)
    tile_enc = encode_columns(tiles, mf.dictionary, model)
    d = mf.dictionary
    dict_bits = dictionary_codelength(d.patch_dim, d.atom_count, d.sample_count_at_training)
    pixels = tiles.shape[1] * side * side

    report.add("patches", grid.patch_count)
    report.add("total_bits", float(enc.bits.sum()))
    report.add("bits_per_patch", float(enc.bits.mean()))
    report.add("support_bits_per_patch", float(enc.bits_support.mean()))
    report.add("dict_bits", dict_bits)
    report.add("bpp", (float(tile_enc.bits.sum()) + dict_bits) / pixels)
    sizes = (enc.coefficients != 0).sum(axis=0)
    hist = np.bincount(sizes)
    for gamma, count in enumerate(hist):
        if count:
            report.add(f"support_hist_{gamma}", int(count))
    report.emit()

    if report.dir:
        from .reports import save_support_histogram

        save_support_histogram(sizes, report.path("support_histogram.png"))
    return 0


def cmd_denoise(args) -> int:
    report = Report(args.report_dir)
    if args.sigma is None:
        raise UsageError("--sigma is required: the noise variance is assumed known")
    noisy = read_pgm(args.image).astype(np.float64)
    clean = read_pgm(args.clean).astype(np.float64) if args.clean else None
    config = _config(args)

    dictionary = None
    if args.model:
        mf = load_model(args.model)
        dictionary = mf.dictionary
        if mf.patch_side != args.patch:
            raise UsageError(
                f"model patch side {mf.patch_side} does not match --patch {args.patch}"
            )
    iid, mk = denoise_image_paired(
        noisy,
        args.sigma,
        config,
        clean=clean,
        patch_side=args.patch,
        delta_a=args.delta_a,
        fit_markov=args.markov,
        threads=_threads(),
        dictionary=dictionary,
    )
    result = mk if args.markov else iid
    write_pgm(args.output, result.denoised)

    report.add("sigma", float(args.sigma))
    report.add("markov", int(args.markov))
    report.add("atom_count", result.dict_size_used)
    report.add("avg_bits_patch", result.avg_bits_per_patch)
    report.add("avg_support_bits", result.avg_support_bits)
    report.add("psnr_noisy_vs_denoised", psnr(noisy, result.denoised))
    if clean is not None:
        report.add("psnr", result.psnr_vs_clean)
        report.add("psnr_noisy", psnr(clean, noisy))
    report.add("output", args.output)
    report.emit()

    if report.dir:
        from .reports import save_image_panel

        images = [noisy, result.denoised] + ([clean] if clean is not None else [])
        titles = ["noisy", "denoised"] + (["clean"] if clean is not None else [])
        save_image_panel(images, titles, report.path("denoise_panel.png"))
    return 0


def cmd_segment(args) -> int:
    report = Report(args.report_dir)
    if len(args.train) < 2:
        raise UsageError("need at least two --train classes")
    training = []
    for entry in args.train:
        path = Path(entry)
        if path.is_dir():
            files = sorted(path.glob("*.pgm"))
            if not files:
                raise UsageError(f"no .pgm files in training directory {entry}")
            training.append(_load_images(files))
        else:
            training.append(_load_images([path]))
    mosaic = read_pgm(args.mosaic).astype(np.float64)
    truth = None
    if args.truth:
        truth = _unscale_labels(read_pgm(args.truth), len(training))

    seg = segment_textures(
        training,
        mosaic,
        markov=args.markov,
        config=_config(args),
        truth=truth,
        patch_side=args.patch,
        delta_a=args.delta_a,
    )
    write_pgm(args.output, _scale_labels(seg.label_map, len(training)))

    report.add("classes", len(training))
    report.add("markov", int(args.markov))
    for r, size in enumerate(seg.per_class_dict_sizes):
        report.add(f"dict_size_{r}", size)
    if seg.error_rate is not None:
        report.add("error_rate", seg.error_rate)
    report.add("output", args.output)
    report.emit()

    if report.dir:
        from .reports import save_label_map

        save_label_map(seg.label_map, report.path("labels.png"), len(training))
    return 0


def cmd_stats(args) -> int:
    report = Report(args.report_dir)
    images = _load_images(args.images)
    stats = compression_stats(
        images, _config(args), patch_side=args.patch, delta_a=args.delta_a
    )
    report.add("images", len(images))
    report.add("pixels", stats.pixel_count)
    report.add("coding_bits", stats.coding_bits)
    report.add("dict_bits", stats.dict_bits)
    report.add("total_bits", stats.total_bits)
    report.add("bpp", stats.bpp)
    report.add("atom_count", stats.dict_size_used)
    report.emit()

    if report.dir:
        from .reports import save_learning_curve

        save_learning_curve(stats.history, report.path("learning_curve.png"))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="mdlsparse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", help="learn a dictionary and write a model file")
    p.add_argument("images", nargs="+", help="training PGM images")
    p.add_argument("-o", "--output", required=True, help="model file to write")
    p.add_argument("--sigma", type=float, default=0.0, help="known noise std (0 = noiseless)")
    p.add_argument("--markov", action="store_true", help="fit and store Markov support tables")
    _add_learn_flags(p)
    p.add_argument("--report-dir", default=None)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("encode", help="encode an image with a model and report bits")
    p.add_argument("model")
    p.add_argument("image")
    p.add_argument("--markov", action="store_true", help="use the model's Markov tables")
    p.add_argument("--report-dir", default=None)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("denoise", help="denoise a noisy image")
    p.add_argument("image", help="noisy PGM image")
    p.add_argument("-o", "--output", required=True, help="denoised PGM to write")
    p.add_argument("--sigma", type=float, default=None, help="known noise std (required)")
    p.add_argument("--model", default=None, help="reuse a learned model instead of learning")
    p.add_argument("--markov", action="store_true")
    p.add_argument("--clean", default=None, help="clean reference for PSNR reporting")
    _add_learn_flags(p)
    p.add_argument("--report-dir", default=None)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("segment", help="texture segmentation by shortest codelength")
    p.add_argument("mosaic", help="mosaic PGM image")
    p.add_argument(
        "--train",
        action="append",
        required=True,
        help="training image or directory, one flag per class",
    )
    p.add_argument("-o", "--output", required=True, help="label map PGM to write")
    p.add_argument("--markov", action="store_true")
    p.add_argument("--truth", default=None, help="ground-truth label PGM")
    _add_learn_flags(p)
    p.add_argument("--report-dir", default=None)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("stats", help="bits-per-pixel compression accounting")
    p.add_argument("images", nargs="+")
    _add_learn_flags(p)
    p.add_argument("--report-dir", default=None)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
