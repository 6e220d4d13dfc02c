"""MDL sparse coding toolkit: code image patches by minimizing description length in bits."""

from .core import (
    Dictionary,
    PatchGrid,
    QuantizationGrid,
    SparseCode,
    assemble_patches,
    extract_patches,
    psnr,
    quantize,
    reconstruct,
)
from .codelen import (
    CodelengthModel,
    LgParams,
    MarkovSupportModel,
    MoeParams,
    MoegModel,
    dictionary_codelength,
    lg_log_density,
    magnitude_codelength,
    markov_fit,
    markov_support_codelength,
    moe_bin_prob,
    moeg_bin_codelength,
    sign_codelength,
    support_codelength_enumerative,
    total_codelength,
)
from .coding import EncodeResult, denoise_encode, encode_grid, forward_selection
from .learning import LearnConfig, dict_update, huber_surrogate, learn_dictionary, prune_atoms
from .pipelines import (
    DenoiseReport,
    SegmentationReport,
    compression_stats,
    denoise_image,
    segment_textures,
)
from .pgm import read_pgm, write_pgm

__version__ = "0.1.0"
