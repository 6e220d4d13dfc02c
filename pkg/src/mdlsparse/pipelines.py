"""End-to-end applications: denoising, texture segmentation, compression stats.

Denoising and segmentation follow the same recipe: learn dictionaries on
patches, encode with the codelength machinery, then aggregate per-patch
results spatially (overlap-averaging for denoising, center-pixel voting plus
a 3x3 median for segmentation). All randomness flows from the seed in the
learning config.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from .codelen import CodelengthModel, dictionary_codelength, markov_fit
from .coding import BatchEncoding, encode_columns, encode_grid_batch
from .core import Dictionary, PatchGrid, assemble_patches, extract_patches, psnr
from .learning import LearnConfig, learn_dictionary

PATCH_SIDE_DEFAULT = 8
MIN_CLASS_PATCHES = 32


@dataclass(frozen=True, eq=False)
class DenoiseReport:
    """Denoised image plus the run's bit accounting."""

    denoised: np.ndarray
    psnr_vs_clean: float | None
    avg_bits_per_patch: float
    dict_size_used: int
    avg_support_bits: float
    avg_iterations: float
    history: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class SegmentationReport:
    """Per-pixel class labels plus accuracy when ground truth is known."""

    label_map: np.ndarray
    error_rate: float | None
    per_class_dict_sizes: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class CompressionReport:
    """Bits-per-pixel accounting over a non-overlapping tiling."""

    bpp: float
    total_bits: float
    coding_bits: float
    dict_bits: float
    pixel_count: int
    dict_size_used: int
    history: tuple[float, ...]


def _build_model(m, p, n, sigma_eta, delta_a):
    return CodelengthModel.create(m, p, n, delta_a=delta_a, sigma2=sigma_eta * sigma_eta)


def _train_count(config: LearnConfig, available: int) -> int:
    if config.max_train_patches is None:
        return available
    return min(available, config.max_train_patches)


def denoise_image(
    noisy: np.ndarray,
    sigma_eta: float,
    config: LearnConfig | None = None,
    markov: bool = False,
    *,
    clean: np.ndarray | None = None,
    patch_side: int = PATCH_SIDE_DEFAULT,
    delta_a: float = 0.5,
    threads: int = 1,
) -> DenoiseReport:
    """Learn a dictionary on the noisy patches, encode each patch with the
    distortion-ball stop, and overlap-average the estimates."""
    iid, mk = denoise_image_paired(
        noisy,
        sigma_eta,
        config,
        clean=clean,
        patch_side=patch_side,
        delta_a=delta_a,
        fit_markov=markov,
        threads=threads,
    )
    return mk if markov else iid


def denoise_image_paired(
    noisy: np.ndarray,
    sigma_eta: float,
    config: LearnConfig | None = None,
    *,
    clean: np.ndarray | None = None,
    patch_side: int = PATCH_SIDE_DEFAULT,
    delta_a: float = 0.5,
    fit_markov: bool = True,
    threads: int = 1,
    dictionary: Dictionary | None = None,
) -> tuple[DenoiseReport, DenoiseReport | None]:
    """Denoise once with the enumerative support code and, optionally, again
    with a Markov model fitted on that first pass. The pair shares one learned
    dictionary, so the two reports are directly comparable."""
    if not sigma_eta > 0:
        raise ValueError("sigma_eta must be positive and known")
    noisy = np.asarray(noisy, dtype=np.float64)
    grid = extract_patches(noisy, patch_side)
    m = grid.patch_dim

    config = config or LearnConfig()
    n_train = _train_count(config, grid.patch_count)
    model = _build_model(m, config.p_max, n_train, sigma_eta, delta_a)
    if dictionary is None:
        dictionary, history = learn_dictionary(grid.data, config, model)
    else:
        history = []

    iid_enc = encode_grid_batch(
        grid, dictionary, model, "enumerative", sigma_eta=sigma_eta, threads=threads
    )
    iid_report = _denoise_report(grid, dictionary, iid_enc, clean, history)
    if not fit_markov:
        return iid_report, None

    mk_model = markov_fit([(iid_enc.supports, grid)])
    mk_enc = encode_grid_batch(grid, dictionary, model, mk_model, sigma_eta=sigma_eta)
    mk_report = _denoise_report(grid, dictionary, mk_enc, clean, history)
    return iid_report, mk_report


def _denoise_report(grid, dictionary, enc: BatchEncoding, clean, history) -> DenoiseReport:
    estimates = dictionary.atoms @ enc.coefficients
    image = assemble_patches(grid, data=estimates)
    quality = None if clean is None else psnr(clean, image)
    return DenoiseReport(
        denoised=image,
        psnr_vs_clean=quality,
        avg_bits_per_patch=float(enc.bits.mean()),
        dict_size_used=dictionary.atom_count,
        avg_support_bits=float(enc.bits_support.mean()),
        avg_iterations=float(enc.iterations.mean()),
        history=tuple(history),
    )


def segment_textures(
    training,
    mosaic: np.ndarray,
    markov: bool = False,
    config: LearnConfig | None = None,
    *,
    truth: np.ndarray | None = None,
    patch_side: int = PATCH_SIDE_DEFAULT,
    delta_a: float = 0.5,
    median: bool = True,
) -> SegmentationReport:
    """Learn one dictionary per texture class, then label each mosaic patch's
    center pixel with the class giving the shortest description.

    `training` is one image or a list of images per class. Label borders not
    covered by any patch center take the nearest assigned label; a 3x3 median
    filter smooths the map unless disabled.
    """
    classes = [_class_patches(entry, patch_side) for entry in training]
    if len(classes) < 2:
        raise ValueError("segmentation needs at least 2 texture classes")
    mosaic = np.asarray(mosaic, dtype=np.float64)
    grid = extract_patches(mosaic, patch_side)
    config = config or LearnConfig()

    bits = np.empty((len(classes), grid.patch_count))
    dict_sizes = []
    for r, data in enumerate(classes):
        model = _build_model(data[0].patch_dim, config.p_max, _train_count(config, _total(data)), 0.0, delta_a)
        stacked = np.concatenate([g.data for g in data], axis=1)
        dictionary, _ = learn_dictionary(stacked, config, model)
        dict_sizes.append(dictionary.atom_count)
        if markov:
            passes = [
                (encode_grid_batch(g, dictionary, model).supports, g) for g in data
            ]
            mk = markov_fit(passes)
            enc = encode_grid_batch(grid, dictionary, model, mk)
        else:
            enc = encode_grid_batch(grid, dictionary, model)
        bits[r] = enc.bits

    labels = _labels_from_bits(bits, grid, mosaic.shape, patch_side)
    if median:
        labels = median_filter(labels, size=3, mode="nearest")
    error = None
    if truth is not None:
        truth = np.asarray(truth)
        if truth.shape != labels.shape:
            raise ValueError("truth map shape must match the mosaic")
        error = float(np.mean(truth != labels))
    return SegmentationReport(labels, error, tuple(dict_sizes))


def _total(grids) -> int:
    return sum(g.patch_count for g in grids)


def _class_patches(entry, patch_side) -> list[PatchGrid]:
    images = entry if isinstance(entry, (list, tuple)) else [entry]
    grids = [extract_patches(np.asarray(img, dtype=np.float64), patch_side) for img in images]
    if _total(grids) < MIN_CLASS_PATCHES:
        raise ValueError(
            f"texture class has only {_total(grids)} patches; need >= {MIN_CLASS_PATCHES}"
        )
    return grids


def _labels_from_bits(bits, grid: PatchGrid, image_shape, patch_side) -> np.ndarray:
    rows, cols = grid.grid_shape
    center = (patch_side - 1) // 2
    winners = np.argmin(bits, axis=0).reshape(rows, cols)
    labels = np.empty(image_shape, dtype=np.int64)
    # covered center-pixel block, then nearest-assigned fill toward the borders
    r0, c0 = center, center
    labels[r0 : r0 + rows, c0 : c0 + cols] = winners
    labels[:r0] = labels[r0]
    labels[r0 + rows :] = labels[r0 + rows - 1]
    labels[:, :c0] = labels[:, c0 : c0 + 1]
    labels[:, c0 + cols :] = labels[:, c0 + cols - 1 : c0 + cols]
    return labels


def tile_columns(image: np.ndarray, patch_side: int) -> np.ndarray:
    """Non-overlapping stride-w tiles as columns (the bpp accounting view);
    trailing rows/cols that do not fill a tile are dropped."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    side = patch_side
    th, tw = h // side, w // side
    if th < 1 or tw < 1:
        raise ValueError(f"image {img.shape} smaller than one {side}x{side} tile")
    blocks = img[: th * side, : tw * side].reshape(th, side, tw, side)
    return blocks.transpose(1, 3, 0, 2).reshape(side, side, -1).transpose(1, 0, 2).reshape(
        side * side, -1
    )


def compression_stats(
    images,
    config: LearnConfig | None = None,
    *,
    patch_side: int = PATCH_SIDE_DEFAULT,
    delta_a: float = 0.5,
) -> CompressionReport:
    """Learn on the image set and report total bits per pixel.

    Coding bits come from encoding a non-overlapping stride-w tiling (each
    pixel counted exactly once); the dictionary cost m*p*log2(n) is included.
    """
    images = [np.asarray(img, dtype=np.float64) for img in images]
    if not images:
        raise ValueError("need at least one image")
    config = config or LearnConfig()
    grids = [extract_patches(img, patch_side) for img in images]
    train = np.concatenate([g.data for g in grids], axis=1)
    n_train = _train_count(config, train.shape[1])
    m = patch_side * patch_side
    model = _build_model(m, config.p_max, n_train, 0.0, delta_a)
    dictionary, history = learn_dictionary(train, config, model)

    coding_bits = 0.0
    pixels = 0
    for img in images:
        tiles = tile_columns(img, patch_side)
        enc = encode_columns(tiles, dictionary, model)
        coding_bits += float(enc.bits.sum())
        pixels += tiles.shape[1] * m
    dict_bits = dictionary_codelength(m, dictionary.atom_count, n_train)
    total = coding_bits + dict_bits
    return CompressionReport(
        bpp=total / pixels,
        total_bits=total,
        coding_bits=coding_bits,
        dict_bits=dict_bits,
        pixel_count=pixels,
        dict_size_used=dictionary.atom_count,
        history=tuple(history),
    )
