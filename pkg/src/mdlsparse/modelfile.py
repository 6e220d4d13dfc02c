"""Binary model file: hyperparameters, grid-quantized atoms, Markov tables.

Little-endian throughout. Layout:

    magic   8 bytes  b"MDLSPRS\\x00"
    version u32
    patch_side, m, p  u32 each
    n       u64      training sample count (fixes delta_d = n**-0.5)
    flags   u8       bit 0: Markov tables present
    pad     7 bytes
    delta_a, delta_e, sigma2, kappa_nu, beta_nu, kappa_eps, beta_eps  f64 each
    atoms   m*p i32  column-major, each value a multiple count of delta_d
    markov  p*8*2 i64 KT counts (only when flagged)

Atoms are stored as signed integer multiples of delta_d, so save/load/save is
byte-identical and every codelength derived from a loaded model reproduces
exactly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .codelen import CodelengthModel, MarkovSupportModel
from .core import Dictionary
from .learning import quantize_dictionary

MAGIC = b"MDLSPRS\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIQB7x7d")


@dataclass(frozen=True, eq=False)
class ModelFile:
    """Everything a coder needs: the dictionary, its model, optional Markov tables."""

    patch_side: int
    dictionary: Dictionary
    delta_a: float
    delta_e: float
    sigma2: float
    kappa_nu: float
    beta_nu: float
    kappa_eps: float
    beta_eps: float
    markov: MarkovSupportModel | None = None

    @property
    def delta_d(self) -> float:
        return 1.0 / math.sqrt(self.dictionary.sample_count_at_training)

    def codelength_model(self) -> CodelengthModel:
        d = self.dictionary
        return CodelengthModel.create(
            d.patch_dim,
            d.atom_count,
            d.sample_count_at_training,
            delta_a=self.delta_a,
            delta_e=self.delta_e,
            sigma2=self.sigma2,
            kappa_nu=self.kappa_nu,
            beta_nu=self.beta_nu,
            kappa_eps=self.kappa_eps,
            beta_eps=self.beta_eps,
        )

    @classmethod
    def build(
        cls,
        patch_side: int,
        dictionary: Dictionary,
        model: CodelengthModel,
        markov: MarkovSupportModel | None = None,
    ) -> "ModelFile":
        return cls(
            patch_side=patch_side,
            dictionary=quantize_dictionary(dictionary),
            delta_a=model.delta_a,
            delta_e=model.delta_e,
            sigma2=model.sigma2,
            kappa_nu=model.moe.kappa,
            beta_nu=model.moe.beta,
            kappa_eps=model.moeg.kappa,
            beta_eps=model.moeg.beta,
            markov=markov,
        )


def save_model(path, mf: ModelFile) -> None:
    d = mf.dictionary
    m, p = d.patch_dim, d.atom_count
    n = d.sample_count_at_training
    ints = np.rint(d.atoms / mf.delta_d).astype(np.int32)
    if np.abs(ints * mf.delta_d - d.atoms).max() > 1e-9:
        raise ValueError("dictionary atoms are not on the delta_d grid; quantize first")
    flags = 1 if mf.markov is not None else 0
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        mf.patch_side,
        m,
        p,
        n,
        flags,
        mf.delta_a,
        mf.delta_e,
        mf.sigma2,
        mf.kappa_nu,
        mf.beta_nu,
        mf.kappa_eps,
        mf.beta_eps,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asfortranarray(ints).tobytes(order="F"))
        if mf.markov is not None:
            if mf.markov.atom_count != p:
                raise ValueError("Markov table atom count does not match the dictionary")
            fh.write(mf.markov.counts.astype("<i8").tobytes())


def load_model(path) -> ModelFile:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError("model file truncated")
        (
            magic,
            version,
            patch_side,
            m,
            p,
            n,
            flags,
            delta_a,
            delta_e,
            sigma2,
            kappa_nu,
            beta_nu,
            kappa_eps,
            beta_eps,
        ) = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ValueError("not a model file (bad magic)")
        if version != VERSION:
            raise ValueError(f"unsupported model file version {version}, expected {VERSION}")
        atom_bytes = fh.read(4 * m * p)
        if len(atom_bytes) != 4 * m * p:
            raise ValueError("model file truncated in the atom block")
        ints = np.frombuffer(atom_bytes, dtype="<i4").reshape((m, p), order="F")
        markov = None
        if flags & 1:
            mk_bytes = fh.read(8 * p * 8 * 2)
            if len(mk_bytes) != 8 * p * 8 * 2:
                raise ValueError("model file truncated in the Markov block")
            counts = np.frombuffer(mk_bytes, dtype="<i8").reshape(p, 8, 2)
            markov = MarkovSupportModel(counts.copy())
    delta_d = 1.0 / math.sqrt(n)
    dictionary = Dictionary(ints.astype(np.float64) * delta_d, n)
    return ModelFile(
        patch_side=patch_side,
        dictionary=dictionary,
        delta_a=delta_a,
        delta_e=delta_e,
        sigma2=sigma2,
        kappa_nu=kappa_nu,
        beta_nu=beta_nu,
        kappa_eps=kappa_eps,
        beta_eps=beta_eps,
        markov=markov,
    )
