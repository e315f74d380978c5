"""normeq: normalization-equivariant denoising toolkit.

Wrap any denoiser so that f(a*y + b) = a*f(y) + b holds exactly, train
small patch models bare or wrapped, measure how equivariance changes
robustness to noise-level mismatch, and run a denoiser-guided sampler for
inpainting-style problems.
"""

from .analysis import (
    BinnedCurve,
    CoverageTable,
    SweepResult,
    coverage_table,
    defect_sweep,
    difficulty_stats,
    fd_jacobian,
    jacobian_filters,
    mismatch_sweep,
    psnr,
    quality_db,
    quality_vs_difficulty,
    sample_difficulties,
    ssim,
)
from .backbones import (
    Backbone,
    BiasFreeConv,
    DctThreshold,
    Identity,
    NeConvStack,
    NonLocalMeans,
    PatchMlp,
    PatchMlpParams,
    UnitSumConv,
    affine_constrain,
    affine_conv,
    affine_residual,
    default_library,
    load_patch_mlp,
    patch_mlp_forward,
    patch_mlp_init,
    random_patch_mlp,
    save_patch_mlp,
    sort_pool,
    sort_pool_channels,
)
from .corpus import make_corpus, make_image
from .instance import (
    InstanceStats,
    denormalize,
    matched_target,
    normalize,
    normalized_distance,
    pooled_stats,
)
from .pgm import PgmError, read_pgm, write_pgm
from .sampler import (
    Projector,
    SamplerConfig,
    Trajectory,
    iterative_denoise,
    make_inpainting_mask,
    noise_gain,
    observe,
    run_sampler,
    step_size,
)
from .training import (
    AdamState,
    NoiseModel,
    TrainConfig,
    TrainingDiverged,
    adam_init,
    adam_step,
    affine_orbit_augment,
    corrupt,
    loss_grad,
    loss_value,
    noise_unit,
    patch_mlp_grads,
    train,
)
from .wrapper import (
    WrapMode,
    WrappedDenoiser,
    apply_wrapped,
    equivariance_defect,
    residual_to_direct,
)

__version__ = "0.1.0"
