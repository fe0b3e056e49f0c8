"""Masked Siamese pre-training for hourly multivariate KPI forecasting.

A small float64 autodiff core, a patch-token transformer encoder with
RMS-normalized attention, masked Siamese pre-training, frozen-backbone
fine-tuning, linear and persistence baselines, synthetic data, and the
experiment drivers that compare them.
"""

from .config import VERSION as __version__
from .tensor import GraphError, ShapeError, Tensor, no_grad
from .layers import (Linear, PositionalEncoding, RMSNorm, RevInState,
                     make_patches, patch_rows, revin_denormalize,
                     revin_normalize, rmsnorm)
from .attention import MultiHeadAttention, qknorm_attention
from .backbone import (Backbone, EncoderLayer, load_checkpoint,
                       parameter_fingerprint, restore_parameters,
                       save_checkpoint)
from .optim import Adam, TrainingDivergedError
from .pretraining import MaskSpec, apply_mask, draw_mask, masked_mse, pretrain
from .heads import ForecastHead, finetune, forecast, forecast_batch
from .baselines import (RIDGE_LAMBDA_GRID, LinearNet, linearnet_forecast,
                        persistence_forecast, ridge_fit, train_linearnet)
from .metrics import metrics, paired_t_test
from .data import (FEATURES, SectorSeries, SplitSpec, SyntheticProfile,
                   export_csv, generate_dataset, generate_sector, ingest_csv,
                   make_windows, normalize_split)
from .config import (DataConfig, ExperimentConfig, FinetuneConfig, ModelConfig,
                     PretrainConfig, RunConfig, load_config)
from .experiments import run_e1, run_e2

__all__ = [
    "__version__",
    "Tensor", "no_grad", "ShapeError", "GraphError",
    "Linear", "RMSNorm", "rmsnorm", "RevInState", "revin_normalize",
    "revin_denormalize", "PositionalEncoding", "patch_rows", "make_patches",
    "MultiHeadAttention", "qknorm_attention",
    "Backbone", "EncoderLayer", "save_checkpoint", "load_checkpoint",
    "restore_parameters", "parameter_fingerprint",
    "Adam", "TrainingDivergedError",
    "MaskSpec", "draw_mask", "apply_mask", "masked_mse", "pretrain",
    "ForecastHead", "finetune", "forecast", "forecast_batch",
    "LinearNet", "linearnet_forecast", "train_linearnet", "ridge_fit",
    "RIDGE_LAMBDA_GRID", "persistence_forecast",
    "metrics", "paired_t_test",
    "FEATURES", "SectorSeries", "SyntheticProfile", "generate_sector",
    "generate_dataset", "export_csv", "ingest_csv", "SplitSpec",
    "normalize_split", "make_windows",
    "ModelConfig", "PretrainConfig", "FinetuneConfig", "DataConfig",
    "ExperimentConfig", "RunConfig", "load_config",
    "run_e1", "run_e2",
]
