"""Codelength-based forward selection and batch encoding over patch grids.

The selection rule is the same everywhere: among inactive atoms, take the
quantized-correlation step whose resulting total codelength is smallest
(ties break to the lowest atom index). Plain coding accepts a step only if
it strictly shrinks the codelength and stops otherwise; the denoising
variant instead keeps adding residual-reducing steps until the residual
falls inside the distortion ball of radius sqrt(m)*sigma.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._kernels import candidate_residual_bits
from .codelen import CodelengthModel, MarkovSupportModel, _contexts_for_grid
from .core import Dictionary, PatchGrid, SparseCode, quantize


@dataclass(frozen=True, eq=False)
class EncodeResult:
    """One encoded patch: its code, quantized residual and bit accounting."""

    code: SparseCode
    residual: np.ndarray
    bits: float
    iterations: int
    bits_residual: float
    bits_support: float
    bits_sign: float
    bits_magnitude: float
    bits_history: tuple[float, ...]


@dataclass(eq=False)
class BatchEncoding:
    """Column-parallel encoding of many patches (internal workhorse)."""

    coefficients: np.ndarray  # p x n
    residual: np.ndarray  # m x n, quantized to delta_e
    bits: np.ndarray  # n
    iterations: np.ndarray  # n
    bits_residual: np.ndarray
    bits_support: np.ndarray
    bits_sign: np.ndarray
    bits_magnitude: np.ndarray
    histories: list[list[float]]

    @property
    def supports(self) -> np.ndarray:
        """n x p boolean support matrix."""
        return (self.coefficients != 0).T

    def result(self, j: int, delta_a: float) -> EncodeResult:
        return EncodeResult(
            code=SparseCode.from_coefficients(self.coefficients[:, j], delta_a),
            residual=self.residual[:, j].copy(),
            bits=float(self.bits[j]),
            iterations=int(self.iterations[j]),
            bits_residual=float(self.bits_residual[j]),
            bits_support=float(self.bits_support[j]),
            bits_sign=float(self.bits_sign[j]),
            bits_magnitude=float(self.bits_magnitude[j]),
            bits_history=tuple(self.histories[j]),
        )

    def results(self, delta_a: float) -> list[EncodeResult]:
        return [self.result(j, delta_a) for j in range(self.coefficients.shape[1])]


def _quantize_residual(E: np.ndarray, delta_e: float) -> np.ndarray:
    return np.sign(E) * np.floor(np.abs(E) / delta_e + 0.5) * delta_e


def encode_columns(
    Y: np.ndarray,
    dictionary: Dictionary,
    model: CodelengthModel,
    *,
    markov: MarkovSupportModel | None = None,
    contexts: np.ndarray | None = None,
    sigma_eta: float | None = None,
) -> BatchEncoding:
    """Encode each column of Y independently with forward selection.

    markov/contexts switch the support term to the Markov codec (contexts is
    n x p, one context id per atom per patch). sigma_eta switches the stopping
    rule to the denoising distortion ball.
    """
    D = dictionary.atoms
    m, p = D.shape
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != m:
        raise ValueError(f"data shape {Y.shape} does not match dictionary rows {m}")
    n = Y.shape[1]
    da, de = model.delta_a, model.delta_e
    err_table = model.err_bits_table
    mag_table = model.mag_bits_table
    gram = D.T @ D
    atom_sq = np.einsum("ki,ki->i", D, D)

    if markov is not None:
        if contexts is None:
            contexts = np.zeros((n, p), dtype=np.int64)
        if contexts.shape != (n, p):
            raise ValueError("contexts must be n x p")
        absent, present = markov.bit_costs
        ctxT = contexts.T  # p x n
        atom_idx = np.arange(p)[:, None]
        cost0 = absent[atom_idx, ctxT]
        flip = present[atom_idx, ctxT] - cost0
        supp_base = cost0.sum(axis=0)
    else:
        enum_table = model.enum_support_table(p)
        supp_base = np.full(n, enum_table[0])
        flip = None

    A = np.zeros((p, n))
    E = Y.copy()
    gamma = np.zeros(n, dtype=np.int64)
    iters = np.zeros(n, dtype=np.int64)
    b_res = model.err_bits(_quantize_residual(E, de)).sum(axis=0)
    b_supp = supp_base.copy()
    b_mag = np.zeros(n)
    bits_now = b_res + b_supp + gamma + b_mag
    histories = [[float(bits_now[j])] for j in range(n)]

    radius2 = None
    if sigma_eta is not None:
        if not sigma_eta > 0:
            raise ValueError("sigma_eta must be positive")
        radius2 = m * sigma_eta * sigma_eta

    active = np.arange(n)
    if radius2 is not None:
        norms2 = np.einsum("kj,kj->j", E, E)
        active = active[norms2 > radius2]

    while active.size:
        Ea = np.ascontiguousarray(E[:, active])
        G = D.T @ Ea
        Delta = _quantize_residual(G, da)  # same away-from-zero rule as quantize()
        supported = A[:, active] != 0
        valid = (~supported) & (Delta != 0.0)

        if radius2 is not None:
            norm2_cur = np.einsum("kj,kj->j", Ea, Ea)
            norm2_new = norm2_cur[None, :] - 2.0 * Delta * G + Delta * Delta * atom_sq[:, None]
            valid &= norm2_new < norm2_cur[None, :]

        if not valid.any():
            break

        L_res = np.empty((p, active.size))
        candidate_residual_bits(Ea, D, Delta, valid, err_table, 1.0 / de, L_res)
        mag_idx = np.minimum(
            np.floor(np.abs(Delta) / da + 0.5).astype(np.int64) - 1, mag_table.shape[0] - 1
        )
        L_mag = b_mag[active][None, :] + mag_table[np.maximum(mag_idx, 0)]
        if flip is not None:
            L_supp = b_supp[active][None, :] + flip[:, active]
        else:
            L_supp = enum_table[gamma[active] + 1][None, :]
        L_sign = (gamma[active] + 1.0)[None, :]
        L_cand = L_res + L_mag + L_supp + L_sign

        best = np.argmin(L_cand, axis=0)
        cols = np.arange(active.size)
        L_best = L_cand[best, cols]
        ok = valid[best, cols]
        if radius2 is None:
            ok &= L_best < bits_now[active]

        if not ok.any():
            break

        take = cols[ok]
        jj = active[take]
        ii = best[ok]
        dd = Delta[ii, take]
        A[ii, jj] += dd
        E[:, jj] -= D[:, ii] * dd
        gamma[jj] += 1
        iters[jj] += 1
        # exact per-accept recomputation: the kernel may have clamped rare
        # out-of-table bins, and tracked bits must match the evaluator
        b_res[jj] = model.err_bits(_quantize_residual(E[:, jj], de)).sum(axis=0)
        b_mag[jj] += model.mag_bits(np.abs(dd) - da)
        if flip is not None:
            b_supp[jj] += flip[ii, jj]
        else:
            b_supp[jj] = enum_table[gamma[jj]]
        bits_now[jj] = b_res[jj] + b_supp[jj] + gamma[jj] + b_mag[jj]
        for col in jj:
            histories[col].append(float(bits_now[col]))

        # a patch stays active only if it accepted a step this round and, in
        # denoise mode, is still outside the distortion ball
        if radius2 is not None:
            norms2 = np.einsum("kj,kj->j", E[:, jj], E[:, jj])
            active = jj[norms2 > radius2]
        else:
            active = jj

    residual_q = _quantize_residual(E, de)
    b_res = model.err_bits(residual_q).sum(axis=0)
    b_mag = _batch_magnitude_bits(A, model)
    if flip is not None:
        S = (A != 0).T
        b_supp = _batch_markov_bits(S, contexts, markov)
    else:
        b_supp = model.enum_support_table(p)[gamma]
    b_sign = gamma.astype(np.float64)
    bits = b_res + b_supp + b_sign + b_mag
    return BatchEncoding(
        coefficients=A,
        residual=residual_q,
        bits=bits,
        iterations=iters,
        bits_residual=b_res,
        bits_support=np.asarray(b_supp, dtype=np.float64),
        bits_sign=b_sign,
        bits_magnitude=b_mag,
        histories=histories,
    )


def _batch_magnitude_bits(A: np.ndarray, model: CodelengthModel) -> np.ndarray:
    out = np.zeros(A.shape[1])
    mask = A != 0
    any_cols = np.flatnonzero(mask.any(axis=0))
    for j in any_cols:
        nz = np.abs(A[mask[:, j], j]) - model.delta_a
        out[j] = model.mag_bits(nz).sum()
    return out


def _batch_markov_bits(
    supports: np.ndarray, contexts: np.ndarray, markov: MarkovSupportModel
) -> np.ndarray:
    absent, present = markov.bit_costs
    p = supports.shape[1]
    atom = np.arange(p)[None, :]
    cost = np.where(supports, present[atom, contexts], absent[atom, contexts])
    return cost.sum(axis=1)


def forward_selection(
    y: np.ndarray,
    dictionary: Dictionary,
    model: CodelengthModel,
    support_codec: str | MarkovSupportModel = "enumerative",
    *,
    context: np.ndarray | None = None,
) -> EncodeResult:
    """Greedily build the code for one sample, stopping at the first round in
    which no new atom lowers the total codelength."""
    markov, contexts = _codec_args(support_codec, context, dictionary.atom_count, 1)
    batch = encode_columns(
        np.asarray(y, dtype=np.float64).reshape(-1, 1),
        dictionary,
        model,
        markov=markov,
        contexts=contexts,
    )
    return batch.result(0, model.delta_a)


def denoise_encode(
    y: np.ndarray,
    dictionary: Dictionary,
    model: CodelengthModel,
    support_codec: str | MarkovSupportModel = "enumerative",
    sigma_eta: float = 1.0,
    *,
    context: np.ndarray | None = None,
) -> EncodeResult:
    """Forward selection with the distortion-ball stop: keep accepting the
    cheapest residual-reducing step while ||e|| exceeds sqrt(m)*sigma_eta."""
    markov, contexts = _codec_args(support_codec, context, dictionary.atom_count, 1)
    batch = encode_columns(
        np.asarray(y, dtype=np.float64).reshape(-1, 1),
        dictionary,
        model,
        markov=markov,
        contexts=contexts,
        sigma_eta=sigma_eta,
    )
    return batch.result(0, model.delta_a)


def _codec_args(support_codec, context, p, n):
    if isinstance(support_codec, MarkovSupportModel):
        ctx = None
        if context is not None:
            ctx = np.asarray(context, dtype=np.int64).reshape(n, p)
        return support_codec, ctx
    if support_codec != "enumerative":
        raise ValueError(f"unknown support codec {support_codec!r}")
    return None, None


def encode_grid(
    patches: PatchGrid,
    dictionary: Dictionary,
    model: CodelengthModel,
    support_codec: str | MarkovSupportModel = "enumerative",
    *,
    mode: str = "mdl",
    sigma_eta: float | None = None,
    threads: int = 1,
) -> list[EncodeResult]:
    """Encode every patch of a grid in raster order.

    With the enumerative codec patches are independent and may be chunked
    across threads. With a Markov codec each patch's context bits come from
    the already-encoded left/top/top-left neighbors, so encoding sweeps the
    grid by anti-diagonals (all patches on one anti-diagonal have completed
    neighbors and run as one batch).
    """
    if mode == "mdl":
        if sigma_eta is not None:
            raise ValueError("sigma_eta only applies to denoise mode")
        sigma = None
    elif mode == "denoise":
        if sigma_eta is None:
            raise ValueError("denoise mode needs sigma_eta")
        sigma = float(sigma_eta)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    batch = encode_grid_batch(
        patches, dictionary, model, support_codec, sigma_eta=sigma, threads=threads
    )
    return batch.results(model.delta_a)


def encode_grid_batch(
    patches: PatchGrid,
    dictionary: Dictionary,
    model: CodelengthModel,
    support_codec: str | MarkovSupportModel = "enumerative",
    *,
    sigma_eta: float | None = None,
    threads: int = 1,
) -> BatchEncoding:
    """Array-valued variant of encode_grid (used by learning and pipelines)."""
    Y = patches.data
    n = Y.shape[1]
    p = dictionary.atom_count
    if not isinstance(support_codec, MarkovSupportModel):
        if support_codec != "enumerative":
            raise ValueError(f"unknown support codec {support_codec!r}")
        if threads > 1 and n > 2 * threads:
            return _encode_chunked(Y, dictionary, model, sigma_eta, threads)
        return encode_columns(Y, dictionary, model, sigma_eta=sigma_eta)

    markov = support_codec
    rows, cols = patches.grid_shape
    supports = np.zeros((n, p), dtype=bool)
    pieces: dict[int, tuple[np.ndarray, BatchEncoding]] = {}
    r_idx, c_idx = np.divmod(np.arange(n), cols)
    for diag in range(rows + cols - 1):
        idx = np.flatnonzero(r_idx + c_idx == diag)
        if idx.size == 0:
            continue
        ctx = _neighbor_contexts(supports, idx, r_idx, c_idx, cols, p)
        enc = encode_columns(
            Y[:, idx], dictionary, model, markov=markov, contexts=ctx, sigma_eta=sigma_eta
        )
        supports[idx] = enc.supports
        pieces[diag] = (idx, enc)
    return _merge_batches(n, p, Y.shape[0], [pieces[d] for d in sorted(pieces)])


def _neighbor_contexts(supports, idx, r_idx, c_idx, cols, p):
    ctx = np.zeros((idx.size, p), dtype=np.int64)
    r, c = r_idx[idx], c_idx[idx]
    has_left = c > 0
    ctx[has_left] += supports[idx[has_left] - 1]
    has_top = r > 0
    ctx[has_top] += 2 * supports[idx[has_top] - cols]
    has_tl = has_left & has_top
    ctx[has_tl] += 4 * supports[idx[has_tl] - cols - 1]
    return ctx


def _merge_batches(n, p, m, pieces) -> BatchEncoding:
    out = BatchEncoding(
        coefficients=np.zeros((p, n)),
        residual=np.zeros((m, n)),
        bits=np.zeros(n),
        iterations=np.zeros(n, dtype=np.int64),
        bits_residual=np.zeros(n),
        bits_support=np.zeros(n),
        bits_sign=np.zeros(n),
        bits_magnitude=np.zeros(n),
        histories=[None] * n,
    )
    for idx, enc in pieces:
        out.coefficients[:, idx] = enc.coefficients
        out.residual[:, idx] = enc.residual
        out.bits[idx] = enc.bits
        out.iterations[idx] = enc.iterations
        out.bits_residual[idx] = enc.bits_residual
        out.bits_support[idx] = enc.bits_support
        out.bits_sign[idx] = enc.bits_sign
        out.bits_magnitude[idx] = enc.bits_magnitude
        for k, j in enumerate(idx):
            out.histories[j] = enc.histories[k]
    return out


def _encode_chunked(Y, dictionary, model, sigma_eta, threads) -> BatchEncoding:
    n = Y.shape[1]
    bounds = np.linspace(0, n, threads * 4 + 1, dtype=int)
    spans = [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1) if bounds[i] < bounds[i + 1]]
    # touch the cached tables once before fanning out
    model.err_bits_table, model.mag_bits_table

    def work(span):
        lo, hi = span
        return encode_columns(Y[:, lo:hi], dictionary, model, sigma_eta=sigma_eta)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(work, spans))
    pieces = [(np.arange(lo, hi), enc) for (lo, hi), enc in zip(spans, parts)]
    return _merge_batches(n, dictionary.atom_count, Y.shape[0], pieces)
