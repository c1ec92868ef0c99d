"""Randomized truncated SVD and matrix completion for large sparse data.

Re-exports resolve lazily so that `import lowrank` (and the CLI module)
stays free of numpy until something numerical is actually touched; the
--threads flag relies on that ordering to pin BLAS thread counts.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # errors
    "LowRankError": "lowrank.errors",
    "ConfigError": "lowrank.errors",
    "DataError": "lowrank.errors",
    "NumericalError": "lowrank.errors",
    "RankDeficiencyError": "lowrank.errors",
    "SizeCapError": "lowrank.errors",
    # rng
    "RngState": "lowrank.rng",
    "gaussian_matrix": "lowrank.rng",
    # dense kernels
    "SvdResult": "lowrank.linalg",
    "eig_svd": "lowrank.linalg",
    "oracle_svd": "lowrank.linalg",
    "orth": "lowrank.linalg",
    "lu_pl": "lowrank.linalg",
    "ORACLE_SVD_CAP": "lowrank.linalg",
    # sparse structures
    "SparseMatrix": "lowrank.sparse",
    "ObservationSet": "lowrank.sparse",
    "spmm": "lowrank.sparse",
    "spmm_t": "lowrank.sparse",
    "project_pattern": "lowrank.sparse",
    "update_pattern_values": "lowrank.sparse",
    "spectral_norm_est": "lowrank.sparse",
    "read_matrix_market": "lowrank.sparse",
    "write_matrix_market": "lowrank.sparse",
    # sketched SVD
    "RsvdParams": "lowrank.rsvd",
    "Subspace": "lowrank.rsvd",
    "rsvd_basic": "lowrank.rsvd",
    "rsvd_pi": "lowrank.rsvd",
    "rsvd_bki": "lowrank.rsvd",
    "qb_error": "lowrank.rsvd",
    # completion
    "SvtParams": "lowrank.completion",
    "CompletionResult": "lowrank.completion",
    "svt_reference": "lowrank.completion",
    "svt_fast": "lowrank.completion",
    "shrink": "lowrank.completion",
    "mae": "lowrank.completion",
    "recycle_q": "lowrank.completion",
    "recycle_u": "lowrank.completion",
    "adapt_power": "lowrank.completion",
    "write_factors": "lowrank.completion",
    "read_factors": "lowrank.completion",
    # data ingest and synthesis
    "load_ratings": "lowrank.ingest",
    "split_observations": "lowrank.ingest",
    "ImageMatrix": "lowrank.ingest",
    "load_image_stacked": "lowrank.ingest",
    "write_image_stacked": "lowrank.ingest",
    "sample_pixels": "lowrank.ingest",
    "synth_low_rank": "lowrank.ingest",
    "synth_ratings": "lowrank.ingest",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    try:
        module = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module 'lowrank' has no attribute {name!r}") from None
    return getattr(importlib.import_module(module), name)


def __dir__():
    return __all__
