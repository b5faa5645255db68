"""Compressed neural feature fields with streaming level of detail.

Train a multiresolution feature grid (plain, vector-quantized with
learned indices, or the frozen-random-index baseline), serialize it as
a prefix-decodable ``.vqad`` bitstream, and evaluate rate-distortion
per level of detail.
"""

from .autodiff import GradReport, Tape, backward, grad_check
from .baselines import (
    KLTTransform,
    KMeansResult,
    klt_fit,
    klt_transform,
    klt_truncate,
    kmeans_vq,
    random_index_grid,
)
from .codec import (
    BitstreamError,
    IncompleteLevelError,
    SizeReport,
    decode,
    decode_prefix,
    encode,
    prefix_sizes,
    size_report,
)
from .estimators import KLTCompressor, KMeansQuantizer, NeuralFieldRegressor
from .field import (
    DecoderMLP,
    FieldModel,
    Ray,
    composite,
    decode_point,
    positional_encode,
    render_ray,
    render_rays,
)
from .grid import (
    EmptyOccupancyError,
    FeatureGridPyramid,
    GridConfig,
    OccupancyMask,
    OutsideDomainError,
    build_pyramid,
    interpolate,
    vertex_count,
)
from .metrics import RDPoint, psnr, rate_distortion, ssim
from .train import (
    TrainConfig,
    TrainedModel,
    TrainingDivergedError,
    bake_model,
    evaluate_loss,
    load_checkpoint,
    sample_lod,
    save_checkpoint,
    train,
)
from .vq import (
    VQConfig,
    bake,
    compression_ratio,
    compression_ratio_limit,
    hard_features,
    soft_features,
    ste_lookup,
)

__version__ = "0.1.0"
