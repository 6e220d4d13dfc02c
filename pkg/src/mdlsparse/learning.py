"""Two-stage dictionary learning under the codelength metric.

Stage one alternates sparse coding (forward selection) with a dictionary
update that minimizes a Huber surrogate of the error codelength by scaled
projected gradient under unit-ball atom norms. Stage two prunes atoms whose
presence increases the total description length, then snaps the surviving
atoms to the n**-0.5 serialization grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .codelen import CodelengthModel, dictionary_codelength
from .coding import BatchEncoding, encode_columns
from .core import Dictionary, PatchGrid, quantize


@dataclass(frozen=True)
class LearnConfig:
    """Knobs for learning; everything has a sensible parameter-free default.

    huber_delta=None derives the surrogate's transition point from the model's
    own scales, sqrt(sigma2) + beta_eps. loss="l2" swaps the surrogate for the
    plain squared error (kept for paired comparisons).
    """

    p_max: int = 64
    max_outer_iters: int = 10
    huber_delta: float | None = None
    step_init: float = 1.0
    step_shrink: float = 0.5
    max_inner_iters: int = 20
    convergence_tol: float = 1e-3
    seed: int = 0
    loss: str = "huber"
    max_train_patches: int | None = 3000
    prune: bool = True

    def __post_init__(self):
        if self.p_max < 1:
            raise ValueError("p_max must be >= 1")
        if self.huber_delta is not None and not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if self.loss not in ("huber", "l2"):
            raise ValueError(f"loss must be 'huber' or 'l2', got {self.loss!r}")


def huber_surrogate(residual: np.ndarray, delta: float) -> tuple[float, np.ndarray]:
    """Elementwise Huber value and gradient: quadratic inside |x| <= delta,
    linear outside, so far-tail errors pull with bounded force."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    x = np.asarray(residual, dtype=np.float64)
    absx = np.abs(x)
    quad = absx <= delta
    value = float(np.sum(np.where(quad, 0.5 * x * x, delta * (absx - 0.5 * delta))))
    grad = np.clip(x, -delta, delta)
    return value, grad


def _l2_surrogate(residual: np.ndarray) -> tuple[float, np.ndarray]:
    x = np.asarray(residual, dtype=np.float64)
    return float(0.5 * np.sum(x * x)), x


def _project(atoms: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(atoms, axis=0)
    scale = np.where(norms > 1.0, 1.0 / np.maximum(norms, 1e-300), 1.0)
    return np.clip(atoms * scale, -1.0, 1.0)


def _loss(residual, config: LearnConfig):
    if config.loss == "l2":
        return _l2_surrogate(residual)
    return huber_surrogate(residual, config.huber_delta)


def _training_matrix(patches) -> np.ndarray:
    if isinstance(patches, PatchGrid):
        return patches.data
    return np.ascontiguousarray(patches, dtype=np.float64)


def _coef_matrix(codes, p: int) -> np.ndarray:
    if isinstance(codes, BatchEncoding):
        return codes.coefficients
    arr = np.asarray(codes, dtype=np.float64) if not isinstance(codes, list) else None
    if arr is not None and arr.ndim == 2:
        return arr
    cols = [c.coefficients() for c in codes]
    A = np.stack(cols, axis=1)
    if A.shape[0] != p:
        raise ValueError("codes atom count does not match the dictionary")
    return A


def dict_update(
    dictionary: Dictionary,
    patches,
    codes,
    config: LearnConfig,
    *,
    huber_delta: float | None = None,
) -> Dictionary:
    """Scaled projected-gradient descent on the surrogate error loss with the
    codes held fixed. Each accepted step is verified to not increase the loss;
    columns stay inside the unit ball and entries inside [-1, 1]."""
    Y = _training_matrix(patches)
    D = dictionary.atoms.copy()
    A = _coef_matrix(codes, D.shape[1])
    if huber_delta is not None:
        config = replace(config, huber_delta=huber_delta)
    elif config.huber_delta is None:
        config = replace(config, huber_delta=1.0)

    R = Y - D @ A
    f_cur, psi = _loss(R, config)
    scale = np.einsum("ij,ij->i", A, A) + 1e-8
    for _ in range(config.max_inner_iters):
        grad = -(psi @ A.T)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite gradient in dictionary update")
        if not grad.any():
            break
        step = config.step_init
        accepted = False
        for _ in range(60):
            D_new = _project(D - step * grad / scale)
            R_new = Y - D_new @ A
            f_new, psi_new = _loss(R_new, config)
            if f_new < f_cur:
                accepted = True
                break
            step *= config.step_shrink
        if not accepted:
            break
        D, R, f_cur, psi = D_new, R_new, f_new, psi_new
    return Dictionary(D, dictionary.sample_count_at_training)


def _init_dictionary(Y: np.ndarray, p_max: int, n_train: int, rng) -> Dictionary:
    n = Y.shape[1]
    if n < p_max:
        warnings.warn(
            f"only {n} training patches for {p_max} atoms; sampling with replacement",
            stacklevel=3,
        )
    picks = rng.choice(n, size=p_max, replace=n < p_max)
    atoms = Y[:, np.sort(picks)].copy()
    norms = np.maximum(np.linalg.norm(atoms, axis=0), 1e-12)
    return Dictionary(atoms / norms, n_train)


def quantize_dictionary(dictionary: Dictionary) -> Dictionary:
    """Snap atoms to the serialization grid delta_d = n**-0.5.

    Entries round to the nearest grid point; any column whose norm then
    exceeds 1 is repaired by stepping its largest entries one grid notch
    toward zero (norm strictly decreases, so the repair terminates). This
    perturbs only the entries that must move instead of shrinking whole
    columns preemptively.
    """
    n = dictionary.sample_count_at_training
    delta_d = 1.0 / math.sqrt(n)
    atoms = quantize(dictionary.atoms.copy(), delta_d)
    over = np.abs(atoms) > 1.0
    atoms[over] -= delta_d * np.sign(atoms[over])
    for col in range(atoms.shape[1]):
        d = atoms[:, col]
        while d @ d > 1.0:
            k = int(np.argmax(np.abs(d)))
            d[k] -= delta_d * math.copysign(1.0, d[k])
    return Dictionary(atoms, n)


def learn_dictionary(
    patches,
    config: LearnConfig,
    model: CodelengthModel,
) -> tuple[Dictionary, list[float]]:
    """Alternate coding and dictionary updates, then prune and quantize.

    Returns the final dictionary and the history of average bits per patch:
    one entry per coding pass, the last one measured on the delivered
    (pruned, grid-snapped) dictionary. At most max_outer_iters entries.
    """
    Y = _training_matrix(patches)
    if Y.size == 0 or Y.shape[1] == 0:
        raise ValueError("cannot learn from an empty patch set")
    rng = np.random.default_rng(config.seed)
    if config.max_train_patches is not None and Y.shape[1] > config.max_train_patches:
        picks = np.sort(rng.choice(Y.shape[1], config.max_train_patches, replace=False))
        Y = Y[:, picks]
    n_train = Y.shape[1]
    if config.huber_delta is None:
        config = replace(config, huber_delta=math.sqrt(model.sigma2) + model.moeg.beta)

    dictionary = _init_dictionary(Y, config.p_max, n_train, rng)
    history: list[float] = []
    prev = None
    for _ in range(max(config.max_outer_iters - 1, 0)):
        enc = encode_columns(Y, dictionary, model)
        avg = float(enc.bits.mean())
        history.append(avg)
        if prev is not None and abs(prev - avg) <= config.convergence_tol * abs(prev):
            break
        prev = avg
        dictionary = dict_update(dictionary, Y, enc, config)

    if config.prune and dictionary.atom_count > 1:
        dictionary = prune_atoms(dictionary, Y, model)
    dictionary = quantize_dictionary(dictionary)
    final = encode_columns(Y, dictionary, model)
    history.append(float(final.bits.mean()))
    return dictionary, history


def prune_atoms(
    dictionary: Dictionary,
    patches,
    model: CodelengthModel,
    support_codec: str = "enumerative",
) -> Dictionary:
    """Backward pass: greedily drop the atom whose removal most reduces the
    total description L(E) + L(A) + L(D); stop when nothing improves.

    Patches whose codes used a removed atom are re-encoded against the reduced
    dictionary; the rest keep their codes (only their support cost is re-based
    to the smaller atom count). Never prunes to an empty dictionary.
    """
    if support_codec != "enumerative":
        raise ValueError("pruning currently supports the enumerative codec only")
    Y = _training_matrix(patches)
    n_train = dictionary.sample_count_at_training
    m = Y.shape[0]
    atoms = dictionary.atoms.copy()
    enc = encode_columns(Y, Dictionary(atoms, n_train), model)
    A = enc.coefficients
    base_bits = enc.bits.copy()  # per-patch totals at the current atom count

    while atoms.shape[1] > 1:
        p = atoms.shape[1]
        enum_now = model.enum_support_table(p)
        enum_less = model.enum_support_table(p - 1)
        gammas = (A != 0).sum(axis=0)
        rebase = enum_less[gammas] - enum_now[gammas]  # per-patch support saving
        dict_saving = dictionary_codelength(m, p, n_train) - dictionary_codelength(
            m, p - 1, n_train
        )

        unused = np.flatnonzero(~(A != 0).any(axis=1))
        if unused.size:
            # dropping an unused atom always pays: every patch's support code
            # shrinks and L(D) loses a full atom
            drop = int(unused[0])
            atoms = np.delete(atoms, drop, axis=1)
            A = np.delete(A, drop, axis=0)
            base_bits = base_bits + rebase
            continue

        best_gain, best_drop, best_patch_update = 0.0, None, None
        current_total = base_bits.sum()
        for k in range(p):
            users = np.flatnonzero(A[k] != 0)
            reduced = Dictionary(np.delete(atoms, k, axis=1), n_train)
            re_enc = encode_columns(Y[:, users], reduced, model)
            kept = np.delete(np.arange(p), k)
            new_total = (base_bits + rebase).sum()
            new_total += re_enc.bits.sum() - (base_bits[users] + rebase[users]).sum()
            gain = current_total - new_total + dict_saving
            if gain > best_gain + 1e-9:
                best_gain, best_drop = gain, k
                best_patch_update = (users, re_enc, kept)

        if best_drop is None:
            break
        users, re_enc, kept = best_patch_update
        atoms = atoms[:, kept]
        A = A[kept]
        base_bits = base_bits + rebase
        A[:, users] = re_enc.coefficients
        base_bits[users] = re_enc.bits
    return Dictionary(atoms, n_train)
