"""Multi-precision binary-coded weight quantization toolkit.

Shared packed bit-planes, one scale set per servable precision, and a
bit-plane GEMV engine that fetches only the planes a request needs.
"""

from .bcq import (
    QuantConfig,
    QuantizedMatrix,
    ScaleTensor,
    alternate_fit,
    bs_recalibrate_codes,
    dequantize,
    greedy_init,
    ls_update_scales,
    reconstruction_error,
    relative_reconstruction_error,
)
from .calibrate import RefineResult, apply_scales, calibration_loss, refine_scales
from .errors import (
    AnyBcqError,
    BadMagicError,
    BadVersionError,
    ChecksumError,
    FileFormatError,
    NonFiniteError,
    TruncatedError,
    UnsupportedDtypeError,
    UsageError,
)
from .gemv import (
    BenchRow,
    GemvEngine,
    GemvStats,
    LookupTable,
    bench,
    dense_gemv_reference,
    dequant_oracle,
    gemv_lut,
    gemv_naive,
)
from .model_format import (
    FootprintReport,
    FootprintRow,
    deserialize,
    footprint,
    model_footprint,
    serialize,
)
from .packing import BitPlaneSet, pack_signs, unpack_signs
from .progressive import (
    MultiPrecisionModel,
    build_multiprecision,
    expand_step,
    precision_errors,
    precision_view,
)
from .tensor_io import load_matrix, random_gaussian, save_matrix

__version__ = "0.1.0"

__all__ = [
    "AnyBcqError",
    "BadMagicError",
    "BadVersionError",
    "BenchRow",
    "BitPlaneSet",
    "ChecksumError",
    "FileFormatError",
    "FootprintReport",
    "FootprintRow",
    "GemvEngine",
    "GemvStats",
    "LookupTable",
    "MultiPrecisionModel",
    "NonFiniteError",
    "QuantConfig",
    "QuantizedMatrix",
    "RefineResult",
    "ScaleTensor",
    "TruncatedError",
    "UnsupportedDtypeError",
    "UsageError",
    "alternate_fit",
    "apply_scales",
    "bench",
    "bs_recalibrate_codes",
    "build_multiprecision",
    "calibration_loss",
    "dense_gemv_reference",
    "dequant_oracle",
    "dequantize",
    "deserialize",
    "expand_step",
    "footprint",
    "gemv_lut",
    "gemv_naive",
    "greedy_init",
    "load_matrix",
    "ls_update_scales",
    "model_footprint",
    "pack_signs",
    "precision_errors",
    "precision_view",
    "random_gaussian",
    "reconstruction_error",
    "refine_scales",
    "relative_reconstruction_error",
    "save_matrix",
    "serialize",
    "unpack_signs",
]
