"""Unified multi-class anomaly detection by masked-attention feature
reconstruction, built on a self-contained numpy autodiff core.

Typical flow: generate or export a feature dataset, `train` a model on the
normal samples, `evaluate` detection and localization AUROC, or run the
comparative `shortcut_experiment` across architectures.
"""

from .blocks import (
    AttentionParams,
    ConfigError,
    FFNParams,
    LayerNormParams,
    MaskError,
    NeighborMask,
    attention,
    build_neighbor_mask,
    ffn_forward,
    transformer_sublayer,
)
from .codec import (
    CodecError,
    decode_features,
    decode_mask,
    encode_features,
    encode_mask,
)
from .dataio import (
    CheckpointError,
    Dataset,
    DatasetManifest,
    LoadedSample,
    ManifestError,
    SyntheticSpec,
    generate_synthetic_dataset,
    load_checkpoint,
    load_dataset,
    load_manifest,
    save_checkpoint,
)
from .experiment import (
    ComparativeReport,
    ExperimentConfig,
    desk_model_config,
    desk_train_config,
    shortcut_experiment,
)
from .gradcheck import GradCheckReport, grad_check
from .model import (
    FeatureMap,
    ModelConfig,
    ModelParams,
    feature_jitter,
    init_params,
    map_to_tokens,
    named_parameters,
    parameter_count,
    project_channels,
    reconstruct,
    reconstruct_tokens,
    tokens_to_map,
)
from .optim import AdamWHyper, AdamWState, OptimError, adamw_step
from .scoring import (
    AnomalyScoreMap,
    MetricError,
    anomaly_score_map,
    auroc,
    build_score_map,
    image_score,
    upsample_bilinear,
)
from .tensor import (
    FullyMaskedRowError,
    GradError,
    NonFiniteError,
    ShapeError,
    Tensor,
    TensorError,
    layer_norm,
    matmul,
    no_grad,
    softmax_masked,
    use_dtype,
)
from .training import (
    Checkpoint,
    ClassMetrics,
    EvalReport,
    TrainConfig,
    TrainError,
    evaluate,
    lr_at_epoch,
    reconstruction_loss,
    train,
)

__version__ = "0.1.0"
