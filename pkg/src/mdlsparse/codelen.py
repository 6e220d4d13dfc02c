"""Probability models and their ideal-Shannon codelengths.

Everything here reports ideal codelengths in bits, -log2 of a discretized
probability mass; fractional bits are the norm and no bitstream is produced.
The magnitude model (MOE) and the error model (MOEG: the same exponential
mixture convolved with a Gaussian) are universal mixtures, so no distribution
parameter is ever estimated from the data being coded.

Discretization conventions: error bins are centered, [e - de/2, e + de/2);
magnitude bins are one-sided, [u, u + da), since shifted magnitudes are
nonnegative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property, lru_cache

import numpy as np
from scipy.special import gammaln, log_ndtr

from .core import PatchGrid, QuantizationGrid, SparseCode

LN2 = math.log(2.0)
_MIN_MASS = 1e-300  # floor for bin masses so codelengths stay finite

# table sizes: integer bin indices covered by the precomputed codelength tables;
# values past the end fall back to the exact formulas
ERR_TABLE_BINS = 8192
MAG_TABLE_BINS = 8192


# ---------------------------------------------------------------------------
# MOE: mixture-of-exponentials magnitude model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MoeParams:
    """Shape/scale of the Gamma mixing density; the mixture has a closed form
    with upper tail (beta/(u+beta))**kappa on u >= 0."""

    kappa: float
    beta: float

    def __post_init__(self):
        if not (self.kappa > 0 and self.beta > 0):
            raise ValueError("kappa and beta must be positive")


def moe_upper_tail(u, params: MoeParams):
    """P(X > u) for the one-sided magnitude mixture, u >= 0."""
    u = np.asarray(u, dtype=np.float64)
    return (params.beta / (u + params.beta)) ** params.kappa


def _check_nonneg_multiple(u, step, what):
    arr = np.asarray(u, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError(f"{what} must be nonnegative")
    if not QuantizationGrid(step).is_quantized(arr):
        raise ValueError(f"{what} must be an integer multiple of the step {step}")
    return arr


def moe_bin_prob(u, params: MoeParams, delta: float):
    """Probability mass of the magnitude bin [u, u+delta), u a multiple of delta."""
    arr = _check_nonneg_multiple(u, delta, "magnitude")
    k, b = params.kappa, params.beta
    tail = (b / (arr + b)) ** k
    frac = -np.expm1(k * (np.log(arr + b) - np.log(arr + b + delta)))
    out = tail * frac
    return float(out) if out.ndim == 0 else out


def moe_bin_bits(u, params: MoeParams, delta: float):
    """-log2 of moe_bin_prob, computed without tail cancellation."""
    arr = np.asarray(u, dtype=np.float64)
    k, b = params.kappa, params.beta
    bits_tail = k * (np.log(arr + b) - np.log(b)) / LN2
    frac = -np.expm1(k * (np.log(arr + b) - np.log(arr + b + delta)))
    out = bits_tail - np.log2(np.maximum(frac, _MIN_MASS))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# LG: Laplacian-plus-Gaussian error component
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LgParams:
    """Laplacian rate theta and Gaussian variance sigma2 of the error model."""

    theta: float
    sigma2: float

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")


def lg_log_density(x, params: LgParams):
    """Log-density of the convolution Laplacian(theta) + N(0, sigma2).

    Evaluated through log-domain scaled complementary error functions
    (log_ndtr), so large theta*sigma never overflows. At sigma2 == 0 this is
    exactly the Laplacian log-density log(theta/2) - theta*|x|.
    """
    x = np.asarray(x, dtype=np.float64)
    th, s2 = params.theta, params.sigma2
    if s2 == 0.0:
        out = math.log(th / 2.0) - th * np.abs(x)
        return float(out) if out.ndim == 0 else out
    sigma = math.sqrt(s2)
    a = -th * x + log_ndtr((x - th * s2) / sigma)
    b = th * x + log_ndtr(-(x + th * s2) / sigma)
    out = math.log(th / 2.0) + th * th * s2 / 2.0 + np.logaddexp(a, b)
    return float(out) if out.ndim == 0 else out


def _lg_upper_tail(x, theta, sigma2):
    """P(X > x) for x >= 0 under the LG model; broadcasts over x and theta."""
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if sigma2 == 0.0:
        return 0.5 * np.exp(-theta * x)
    sigma = math.sqrt(sigma2)
    gauss = np.exp(log_ndtr(-x / sigma))
    half = math.log(0.5)
    lift = theta * theta * sigma2 / 2.0
    plus = np.exp(half - theta * x + lift + log_ndtr((x - theta * sigma2) / sigma))
    minus = np.exp(half + theta * x + lift + log_ndtr(-(x + theta * sigma2) / sigma))
    return np.maximum(gauss + plus - minus, 0.0)


def _lg_bin_mass(e, delta, theta, sigma2):
    """Mass of the centered bin [e - delta/2, e + delta/2); symmetric in e."""
    e = np.abs(np.asarray(e, dtype=np.float64))
    lo, hi = e - delta / 2.0, e + delta / 2.0
    upper_hi = _lg_upper_tail(hi, theta, sigma2)
    center = 1.0 - 2.0 * upper_hi
    offset = _lg_upper_tail(np.maximum(lo, 0.0), theta, sigma2) - upper_hi
    return np.maximum(np.where(lo < 0, center, offset), 0.0)


# ---------------------------------------------------------------------------
# MOEG: Gamma mixture of LG components (equivalently MOE convolved with a Gaussian)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MoegModel:
    """Error model: Gamma-weighted mixture of LG components.

    nodes/weights discretize the Gamma mixing density over the Laplacian rate
    on a logarithmic grid; weights are trapezoid-rule masses normalized to sum
    to one, so the discretized model stays a proper distribution. A log grid
    is required here: the mixture's polynomial tail is carried by rates near
    zero, which any coarse quantile placement misses by orders of magnitude.
    """

    kappa: float
    beta: float
    sigma2: float
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if nodes.shape != weights.shape or nodes.ndim != 1 or nodes.size == 0:
            raise ValueError("nodes and weights must be equal-length vectors")
        if np.any(nodes <= 0) or np.any(weights < 0):
            raise ValueError("nodes must be positive and weights nonnegative")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def create(
        cls,
        kappa: float,
        beta: float,
        sigma2: float,
        nodes_per_decade: int = 12,
        rate_range: tuple[float, float] = (1e-6, 1e4),
    ) -> "MoegModel":
        lo, hi = rate_range
        count = int(math.ceil((math.log10(hi) - math.log10(lo)) * nodes_per_decade)) + 1
        logt = np.linspace(math.log(lo), math.log(hi), count)
        theta = np.exp(logt)
        # Gamma density times theta (the log-substitution Jacobian)
        logw = kappa * math.log(beta) - gammaln(kappa) + kappa * logt - beta * theta
        w = np.exp(logw)
        w[0] *= 0.5
        w[-1] *= 0.5
        w *= logt[1] - logt[0]
        return cls(kappa, beta, sigma2, theta, w / w.sum())

    def bin_mass(self, e, delta: float):
        """Mass of the centered bin around e (a multiple of delta); symmetric."""
        e = np.atleast_1d(np.asarray(e, dtype=np.float64))
        masses = _lg_bin_mass(e[:, None], delta, self.nodes[None, :], self.sigma2)
        out = masses @ self.weights
        return out

    def bin_bits(self, e, delta: float):
        return -np.log2(np.maximum(self.bin_mass(e, delta), _MIN_MASS))


def moeg_bin_codelength(e, model: MoegModel, delta_e: float):
    """Ideal codelength in bits of an error value quantized to delta_e."""
    arr = np.asarray(e, dtype=np.float64)
    if not QuantizationGrid(delta_e).is_quantized(arr):
        raise ValueError("error values must be integer multiples of delta_e")
    out = model.bin_bits(arr, delta_e)
    return float(out[0]) if np.ndim(e) == 0 else out


# ---------------------------------------------------------------------------
# Support, sign and magnitude codes
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _enum_support_table(p: int) -> np.ndarray:
    """bits(gamma) = log2(p) + log2(C(p, gamma)) for gamma = 0..p."""
    g = np.arange(p + 1, dtype=np.float64)
    logc = gammaln(p + 1) - gammaln(g + 1) - gammaln(p - g + 1)
    out = math.log2(p) + logc / LN2
    out.setflags(write=False)
    return out


def support_codelength_enumerative(support, p: int | None = None) -> float:
    """Two-part support code: support size in log2(p) bits, then the
    arrangement in log2(C(p, gamma)) bits."""
    vec = np.asarray(support)
    if p is None:
        p = vec.shape[0]
    elif vec.shape[0] != p:
        raise ValueError(f"support length {vec.shape[0]} != atom count {p}")
    gamma = int(np.count_nonzero(vec))
    return float(_enum_support_table(p)[gamma])


def sign_codelength(support) -> float:
    """One bit per present atom."""
    return float(np.count_nonzero(np.asarray(support)))


def magnitude_codelength(code: SparseCode, model: "CodelengthModel") -> float:
    """Sum of magnitude-bin codelengths over the supported entries."""
    mags = code.magnitudes[code.support]
    if mags.size == 0:
        return 0.0
    _check_nonneg_multiple(mags, model.delta_a, "magnitude")
    return float(model.mag_bits(mags).sum())


def dictionary_codelength(m: int, p: int, n: int) -> float:
    """m*p*log2(n) bits: a uniform prior on [-1,1] quantized at n**-0.5 makes the
    cost independent of the atom values."""
    if n < 2:
        raise ValueError("sample count n must be >= 2")
    return m * p * math.log2(n)


# ---------------------------------------------------------------------------
# Markov support model over left/top/top-left neighbor contexts
# ---------------------------------------------------------------------------

CONTEXT_COUNT = 8  # 3 neighbor bits: left, top, top-left


def _contexts_for_grid(supports: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Per-patch, per-atom context id in 0..7 from already-coded neighbors.

    Bit 0: same atom present in the left patch, bit 1: top, bit 2: top-left.
    Missing neighbors at the grid border contribute a 0 bit.
    """
    rows, cols = grid.grid_shape
    p = supports.shape[1]
    if supports.shape[0] != rows * cols:
        raise ValueError("supports row count must equal the grid's patch count")
    s = supports.astype(np.uint8).reshape(rows, cols, p)
    ctx = np.zeros((rows, cols, p), dtype=np.uint8)
    ctx[:, 1:] += s[:, :-1]
    ctx[1:, :] += 2 * s[:-1, :]
    ctx[1:, 1:] += 4 * s[:-1, :-1]
    return ctx.reshape(rows * cols, p)


@dataclass(frozen=True, eq=False)
class MarkovSupportModel:
    """Per-atom conditional Bernoulli table indexed by the 8 neighbor contexts.

    Probabilities come from the Krichevsky-Trofimov rule (n1 + 1/2)/(n + 1), so
    a freshly constructed model with zero counts codes every bit at one bit.
    """

    counts: np.ndarray  # p x 8 x 2, [absent, present] observations

    def __post_init__(self):
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        if counts.ndim != 3 or counts.shape[1:] != (CONTEXT_COUNT, 2):
            raise ValueError("counts must have shape (p, 8, 2)")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def uniform(cls, p: int) -> "MarkovSupportModel":
        return cls(np.zeros((p, CONTEXT_COUNT, 2), dtype=np.int64))

    @property
    def atom_count(self) -> int:
        return self.counts.shape[0]

    @cached_property
    def probabilities(self) -> np.ndarray:
        """KT estimate of P(present | context), shape p x 8, values in (0, 1)."""
        n1 = self.counts[:, :, 1]
        total = self.counts.sum(axis=2)
        out = (n1 + 0.5) / (total + 1.0)
        out.setflags(write=False)
        return out

    @cached_property
    def bit_costs(self) -> tuple[np.ndarray, np.ndarray]:
        """(-log2(1-P), -log2 P) per atom/context: cost of coding absent/present."""
        prob = self.probabilities
        absent = -np.log2(1.0 - prob)
        present = -np.log2(prob)
        absent.setflags(write=False)
        present.setflags(write=False)
        return absent, present


def markov_fit(encodings) -> MarkovSupportModel:
    """Fit KT counts from (supports, grid) pairs.

    Each pair is an n-by-p boolean support matrix in the grid's raster order
    together with its PatchGrid; counts accumulate across pairs.
    """
    encodings = list(encodings)
    if not encodings:
        raise ValueError("markov_fit needs at least one (supports, grid) pair")
    p = np.asarray(encodings[0][0]).shape[1]
    counts = np.zeros(p * CONTEXT_COUNT * 2, dtype=np.int64)
    for supports, grid in encodings:
        s = np.ascontiguousarray(supports, dtype=bool)
        if s.shape[1] != p:
            raise ValueError("all support matrices must share the atom count")
        ctx = _contexts_for_grid(s, grid)
        atom = np.broadcast_to(np.arange(p, dtype=np.int64), s.shape)
        flat = (atom * CONTEXT_COUNT + ctx) * 2 + s
        counts += np.bincount(flat.ravel(), minlength=counts.size)
    return MarkovSupportModel(counts.reshape(p, CONTEXT_COUNT, 2))


def markov_support_codelength(support, context_bits, model: MarkovSupportModel) -> float:
    """Sum over atoms of -log2 P(bit | context) under the fitted KT table."""
    if model is None:
        raise ValueError("markov support codelength needs a fitted model")
    vec = np.asarray(support, dtype=bool)
    ctx = np.asarray(context_bits, dtype=np.int64)
    if vec.shape != ctx.shape or vec.shape[0] != model.atom_count:
        raise ValueError("support/context shape mismatch with the model")
    absent, present = model.bit_costs
    atoms = np.arange(model.atom_count)
    return float(np.where(vec, present[atoms, ctx], absent[atoms, ctx]).sum())


# ---------------------------------------------------------------------------
# The full codelength model and the total objective
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CodelengthModel:
    """All hyperparameters, quantization steps and precomputed bin tables.

    dims = (m, p, n): patch dimension, atom count at creation, training sample
    count. Codelength queries take sizes from their arguments where possible;
    dims feeds the dictionary cost and serialization.
    """

    moe: MoeParams
    moeg: MoegModel
    delta_a: float
    delta_e: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        if not (self.delta_a > 0 and self.delta_e > 0):
            raise ValueError("quantization steps must be positive")

    @classmethod
    def create(
        cls,
        m: int,
        p: int,
        n: int,
        *,
        delta_a: float = 0.5,
        delta_e: float = 1.0,
        sigma2: float = 0.0,
        kappa_nu: float = 3.0,
        kappa_eps: float = 3.0,
        beta_nu: float | None = None,
        beta_eps: float | None = None,
    ) -> "CodelengthModel":
        """Defaults follow the parameter-free recipe: kappa 3.0 and both mixture
        scales tied to the coefficient step delta_a."""
        beta_nu = delta_a if beta_nu is None else beta_nu
        beta_eps = delta_a if beta_eps is None else beta_eps
        return cls(
            moe=MoeParams(kappa_nu, beta_nu),
            moeg=MoegModel.create(kappa_eps, beta_eps, sigma2),
            delta_a=delta_a,
            delta_e=delta_e,
            dims=(m, p, n),
        )

    @property
    def sigma2(self) -> float:
        return self.moeg.sigma2

    def with_dims(self, m: int, p: int, n: int) -> "CodelengthModel":
        """Same distributions and tables, new bookkeeping dims."""
        clone = replace(self, dims=(m, p, n))
        for key in ("err_bits_table", "mag_bits_table"):
            if key in self.__dict__:
                clone.__dict__[key] = self.__dict__[key]
        return clone

    @cached_property
    def err_bits_table(self) -> np.ndarray:
        """Codelength of error bin k*delta_e for k = 0..ERR_TABLE_BINS."""
        grid = np.arange(ERR_TABLE_BINS + 1, dtype=np.float64) * self.delta_e
        out = self.moeg.bin_bits(grid, self.delta_e)
        out.setflags(write=False)
        return out

    @cached_property
    def mag_bits_table(self) -> np.ndarray:
        """Codelength of magnitude bin [k*delta_a, (k+1)*delta_a) for k = 0..MAG_TABLE_BINS."""
        grid = np.arange(MAG_TABLE_BINS + 1, dtype=np.float64) * self.delta_a
        out = moe_bin_bits(grid, self.moe, self.delta_a)
        out.setflags(write=False)
        return out

    def err_bits(self, e: np.ndarray) -> np.ndarray:
        """Per-element codelengths of a residual already quantized to delta_e."""
        idx = np.floor(np.abs(np.asarray(e, dtype=np.float64)) / self.delta_e + 0.5).astype(
            np.int64
        )
        table = self.err_bits_table
        out = table[np.minimum(idx, ERR_TABLE_BINS)]
        over = idx > ERR_TABLE_BINS
        if np.any(over):
            out[over] = self.moeg.bin_bits(idx[over] * self.delta_e, self.delta_e)
        return out

    def mag_bits(self, nu: np.ndarray) -> np.ndarray:
        """Per-entry codelengths of shifted magnitudes quantized to delta_a."""
        idx = np.floor(np.asarray(nu, dtype=np.float64) / self.delta_a + 0.5).astype(np.int64)
        table = self.mag_bits_table
        out = table[np.minimum(idx, MAG_TABLE_BINS)]
        over = idx > MAG_TABLE_BINS
        if np.any(over):
            out[over] = moe_bin_bits(idx[over] * self.delta_a, self.moe, self.delta_a)
        return out

    def enum_support_table(self, p: int) -> np.ndarray:
        return _enum_support_table(p)


def total_codelength(
    residual: np.ndarray,
    code: SparseCode,
    model: CodelengthModel,
    *,
    markov: MarkovSupportModel | None = None,
    context: np.ndarray | None = None,
) -> float:
    """Total description length of one patch: error + support + signs + magnitudes.

    The support term uses the enumerative code unless a Markov model (with the
    patch's neighbor contexts) is given.
    """
    res = np.asarray(residual, dtype=np.float64)
    if res.ndim != 1 or res.shape[0] != model.dims[0]:
        raise ValueError(f"residual length {res.shape} does not match m={model.dims[0]}")
    if not QuantizationGrid(model.delta_e).is_quantized(res):
        raise ValueError("residual must be quantized to delta_e")
    if markov is not None:
        if context is None:
            context = np.zeros(code.atom_count, dtype=np.int64)
        bits_support = markov_support_codelength(code.support, context, markov)
    else:
        bits_support = support_codelength_enumerative(code.support)
    bits = (
        float(model.err_bits(res).sum())
        + bits_support
        + sign_codelength(code.support)
        + magnitude_codelength(code, model)
    )
    return bits
