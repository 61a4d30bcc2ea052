"""nhalf: integer-only inference engine and fusion compiler for the N+Half BNN.

The compiler folds each block's HardTanh/PReLU/BatchNorm stack together with
the next block's Sign into per-channel integer threshold rules; the engine
then classifies using only XNOR/popcount, integer add and integer compare.
A float64 reference path provides the correctness oracle.
"""

from .engine import (
    ClassScores,
    EvalResult,
    HistogramSeries,
    PreprocessConfig,
    distribution_stats,
    evaluate,
    forward_fused,
    load_image,
    manifest_from_directory,
    preprocess,
    read_manifest,
    write_stats_csv,
)
from .errors import (
    BadMagicError,
    ChecksumError,
    CompileError,
    ConfigError,
    DomainError,
    FormatError,
    InputError,
    NHalfError,
    ShapeError,
    TruncatedError,
    VersionError,
)
from .fusion import (
    BitWidthReport,
    BranchMode,
    ChannelAffine,
    FusedChannelRule,
    analyze_bitwidths,
    apply_rules,
    boundary_ties,
    derive_rule,
    fold_bn_prelu,
    fused_decide,
    rules_to_arrays,
)
from .io import (
    load_checkpoint,
    load_fused,
    save_checkpoint,
    save_fused,
    sniff_container,
)
from .kernels import OpCounters, binary_gemm, conv_binary, maxpool, xnor_dot
from .model import (
    ArchitectureConfig,
    BlockSpec,
    Checkpoint,
    CheckpointBlock,
    FusedBlock,
    FusedModel,
    ShapePlan,
    StorageReport,
    compile_checkpoint,
    count_params,
    default_config,
    infer_shapes,
    storage_report,
    with_clip,
)
from .reference import (
    ActivationParams,
    ReferenceTrace,
    batchnorm,
    func_reference,
    hardtanh,
    prelu,
    reference_forward,
    sign,
)
from .tensors import (
    BitTensor,
    ConvGeometry,
    IntTensor,
    PatchMatrix,
    Shape,
    im2col,
    pack_bits,
    signed_width,
)

__version__ = "0.1.0"
