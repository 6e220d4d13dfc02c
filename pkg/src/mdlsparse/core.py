"""Quantization grids, patch extraction/reassembly, and the basic value types.

Patches are vectorized column-major within the window: element (r, c) of a
w-by-w window lands at index r + c*w of the patch vector. Pixel intensities
stay in native 8-bit units throughout (no mean subtraction, no rescaling).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PEAK = 255.0


def _step_of(grid) -> float:
    step = float(getattr(grid, "step", grid))
    if not step > 0:
        raise ValueError(f"quantization step must be positive, got {step}")
    return step


def quantize(x, grid):
    """Round to the nearest integer multiple of the grid step.

    Ties (exact half steps) round away from zero, so the result is
    sign-symmetric. `grid` may be a QuantizationGrid or a bare step.
    """
    step = _step_of(grid)
    arr = np.asarray(x, dtype=np.float64)
    q = np.sign(arr) * np.floor(np.abs(arr) / step + 0.5) * step
    return float(q) if q.ndim == 0 else q


@dataclass(frozen=True)
class QuantizationGrid:
    """Uniform scalar quantizer with a fixed positive step."""

    step: float

    def __post_init__(self):
        _step_of(self)

    def quantize(self, x):
        return quantize(x, self.step)

    def is_quantized(self, x, rtol=1e-6) -> bool:
        arr = np.asarray(x, dtype=np.float64)
        return bool(np.all(np.abs(arr - quantize(arr, self.step)) <= rtol * self.step))


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=arr.dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """All overlapping patches of one image, one vectorized patch per column.

    data:       m x n matrix, m = patch_side**2
    positions:  n x 2 (row, col) of each patch's top-left pixel, raster order
    image_dims: (height, width) of the source image
    patch_side: window side w
    """

    data: np.ndarray
    positions: np.ndarray
    image_dims: tuple[int, int]
    patch_side: int

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        pos = np.ascontiguousarray(self.positions, dtype=np.int64)
        h, w = self.image_dims
        side = int(self.patch_side)
        rows, cols = h - side + 1, w - side + 1
        if side < 1 or rows < 1 or cols < 1:
            raise ValueError(f"image {self.image_dims} smaller than patch side {side}")
        if data.shape != (side * side, rows * cols):
            raise ValueError(
                f"patch matrix shape {data.shape} does not match "
                f"stride-1 extraction ({side * side}, {rows * cols})"
            )
        expect = np.stack(
            np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij"), axis=-1
        ).reshape(-1, 2)
        if pos.shape != expect.shape or not np.array_equal(pos, expect):
            raise ValueError("positions must be the unique raster-order grid of top-left pixels")
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "positions", _readonly(pos))

    @property
    def patch_count(self) -> int:
        return self.data.shape[1]

    @property
    def patch_dim(self) -> int:
        return self.data.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        h, w = self.image_dims
        return h - self.patch_side + 1, w - self.patch_side + 1


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Atom matrix with unit-ball columns and entries in [-1, 1].

    sample_count_at_training is the number of training patches the atoms were
    fitted on; it fixes the atom quantization step and the dictionary
    codelength m*p*log2(n).
    """

    atoms: np.ndarray
    sample_count_at_training: int

    def __post_init__(self):
        atoms = np.ascontiguousarray(self.atoms, dtype=np.float64)
        if atoms.ndim != 2:
            raise ValueError("atoms must be a 2-D matrix")
        norms = np.linalg.norm(atoms, axis=0)
        if norms.size and norms.max() > 1.0 + 1e-9:
            raise ValueError(f"atom column norm {norms.max():.12f} exceeds 1")
        if atoms.size and np.abs(atoms).max() > 1.0 + 1e-12:
            raise ValueError("atom entries must lie in [-1, 1]")
        if self.sample_count_at_training < 1:
            raise ValueError("sample_count_at_training must be >= 1")
        object.__setattr__(self, "atoms", _readonly(atoms))

    @property
    def atom_count(self) -> int:
        return self.atoms.shape[1]

    @property
    def patch_dim(self) -> int:
        return self.atoms.shape[0]


@dataclass(frozen=True, eq=False)
class SparseCode:
    """Support/sign/shifted-magnitude triple for one patch.

    The encoded coefficient of atom k is support[k]*signs[k]*(magnitudes[k] + delta_a):
    magnitudes hold the nonnegative shifted value, quantized to delta_a, so any
    present coefficient has absolute value >= delta_a.
    """

    support: np.ndarray
    signs: np.ndarray
    magnitudes: np.ndarray
    delta_a: float

    def __post_init__(self):
        support = np.ascontiguousarray(self.support, dtype=bool)
        signs = np.ascontiguousarray(self.signs, dtype=np.int8)
        mags = np.ascontiguousarray(self.magnitudes, dtype=np.float64)
        if not (support.shape == signs.shape == mags.shape) or support.ndim != 1:
            raise ValueError("support, signs and magnitudes must be equal-length vectors")
        if not self.delta_a > 0:
            raise ValueError("delta_a must be positive")
        if np.any((signs != 0) != support):
            raise ValueError("signs must be nonzero exactly on the support")
        if np.any(mags < 0) or np.any(mags[~support] != 0):
            raise ValueError("magnitudes must be nonnegative and zero off the support")
        grid = QuantizationGrid(self.delta_a)
        if not grid.is_quantized(mags[support]):
            raise ValueError("stored magnitudes must be integer multiples of delta_a")
        object.__setattr__(self, "support", _readonly(support))
        object.__setattr__(self, "signs", _readonly(signs))
        object.__setattr__(self, "magnitudes", _readonly(mags))

    @property
    def atom_count(self) -> int:
        return self.support.shape[0]

    @property
    def support_size(self) -> int:
        return int(self.support.sum())

    def coefficients(self) -> np.ndarray:
        """Reconstructed coefficient vector: support*sign*(magnitude + delta_a)."""
        return np.where(self.support, self.signs * (self.magnitudes + self.delta_a), 0.0)

    @classmethod
    def from_coefficients(cls, coeffs: np.ndarray, delta_a: float) -> "SparseCode":
        """Build from a coefficient vector whose nonzeros are multiples of delta_a."""
        coeffs = np.asarray(coeffs, dtype=np.float64)
        support = coeffs != 0
        signs = np.sign(coeffs).astype(np.int8)
        mags = np.where(support, np.abs(coeffs) - delta_a, 0.0)
        if np.any(mags < -1e-9 * delta_a):
            raise ValueError("nonzero coefficients must have magnitude >= delta_a")
        return cls(support, signs, np.maximum(mags, 0.0), delta_a)


def extract_patches(image: np.ndarray, patch_side: int) -> PatchGrid:
    """Extract all stride-1 overlapping square patches of an image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be 2-D grayscale")
    h, w = img.shape
    side = int(patch_side)
    if side < 1 or h < side or w < side:
        raise ValueError(f"image {img.shape} smaller than patch side {side}")
    wins = sliding_window_view(img, (side, side))
    rows, cols = wins.shape[:2]
    # transpose each window before the C-order flatten = column-major vectorization
    data = wins.transpose(0, 1, 3, 2).reshape(rows * cols, side * side).T
    pos = np.stack(
        np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij"), axis=-1
    ).reshape(-1, 2)
    return PatchGrid(data, pos, (h, w), side)


def assemble_patches(patches: PatchGrid, data: np.ndarray | None = None) -> np.ndarray:
    """Average overlapping patch estimates back into an image, clipped to [0, 255].

    `data` overrides the grid's own patch values (same m x n layout); used to
    reassemble per-patch estimates while keeping the grid geometry.
    """
    vals = patches.data if data is None else np.asarray(data, dtype=np.float64)
    if vals.shape != patches.data.shape:
        raise ValueError("replacement data must match the grid's patch matrix shape")
    h, w = patches.image_dims
    side = patches.patch_side
    rows, cols = patches.grid_shape
    acc = np.zeros((h, w))
    cnt = np.zeros((h, w))
    for dc in range(side):
        for dr in range(side):
            plane = vals[dr + dc * side].reshape(rows, cols)
            acc[dr : dr + rows, dc : dc + cols] += plane
            cnt[dr : dr + rows, dc : dc + cols] += 1.0
    return np.clip(acc / cnt, 0.0, PEAK)


def reconstruct(code: SparseCode, dictionary: Dictionary) -> np.ndarray:
    """Patch estimate D @ alpha for a sparse code."""
    if code.atom_count != dictionary.atom_count:
        raise ValueError(
            f"code has {code.atom_count} atoms but dictionary has {dictionary.atom_count}"
        )
    return dictionary.atoms @ code.coefficients()


def psnr(reference: np.ndarray, test: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on the 8-bit scale; +inf for identical images."""
    ref = np.asarray(reference, dtype=np.float64)
    tst = np.asarray(test, dtype=np.float64)
    if ref.shape != tst.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {tst.shape}")
    mse = float(np.mean((ref - tst) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)
