"""loopguard: embedding-space anomaly detection toolkit.

Trains autoencoder-backed one-class hypersphere models over precomputed
audio embeddings, benchmarks them against Isolation Forest and PCA
reconstruction error, and exports plot-ready evaluation artifacts.
"""

__version__ = "0.1.0"

from .baselines import (
    IsolationForest,
    IsolationForestConfig,
    PcaModel,
    avg_path_c,
    fit_iforest,
    fit_pca,
    iforest_score,
    pca_recon_error,
)
from .embeddings import (
    DatasetSplit,
    EmbeddingMatrix,
    ManifestEntry,
    SampleManifest,
    load_embeddings,
    save_embeddings,
    split_dataset,
)
from .errors import (
    ConfigError,
    EmbeddingFormatError,
    LoopguardError,
    NumericError,
    PrerequisiteError,
    TrainingDiverged,
)
from .evaluation import (
    BoxStats,
    HistogramExport,
    LatentReport,
    Projection2D,
    ThresholdReport,
    box_stats,
    classify,
    latent_report,
    percentile_threshold,
    project_2d,
    score_histogram,
    threshold_report,
)
from .models import AutoencoderModel, EncoderSpec, build_model, encode, mse_loss, reconstruct
from .nn import LayerBlock, Sequential, block_backward, block_forward, elu, grad_check, init_layer_block
from .rng import RNG_ALGORITHM, make_rng
from .training import (
    AdamWState,
    Hyperparameters,
    SvddModel,
    TrainHistory,
    adamw_step,
    cosine_lr,
    finetune_svdd,
    init_center,
    pretrain_autoencoder,
    svdd_score,
)
