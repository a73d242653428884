"""Data-uncertainty learning for discriminative embeddings.

Two trainable methods over one small encoder: stochastic Gaussian
embeddings trained with margin softmax plus a KL regularizer, and
heteroscedastic regression of embeddings onto frozen class centers.
Plus the synthetic-data, metric, and analysis machinery to study what the
learned uncertainty does.
"""

from .embeddings import (
    GaussianEmbedding,
    LatentConfig,
    SampledEmbedding,
    harmonic_mean_sigma,
    sample_embedding,
    sigma_from_raw,
)
from .errors import ConfigError, ContractViolation, DivergenceError, MissingInputError
from .losses import (
    ClassifierWeights,
    ClsLossConfig,
    SoftmaxConfig,
    batch_rgs_loss,
    cls_total_loss,
    heteroscedastic_nll,
    kl_regularizer,
    softmax_loss,
)
from .metrics import RocReport, ScorePair, cosine_score, mls_score, rank1, roc
from .model import EncoderModel, load_checkpoint, predict_labels, save_checkpoint
from .synthdata import (
    FuncSpec,
    HetRegDataset,
    SyntheticIdentityDataset,
    corrupt_fraction,
    gen_hetreg,
    gen_identities,
)
from .training import (
    TrainConfig,
    TrainLog,
    gradient_check,
    train_baseline,
    train_dul_cls,
    train_dul_rgs,
    train_hetreg,
    triangular_lr,
)

__version__ = "0.1.0"

__all__ = [
    "GaussianEmbedding", "LatentConfig", "SampledEmbedding",
    "harmonic_mean_sigma", "sample_embedding", "sigma_from_raw",
    "ContractViolation", "DivergenceError", "ConfigError", "MissingInputError",
    "ClassifierWeights", "ClsLossConfig", "SoftmaxConfig",
    "softmax_loss", "kl_regularizer", "cls_total_loss",
    "heteroscedastic_nll", "batch_rgs_loss",
    "ScorePair", "RocReport", "cosine_score", "mls_score", "roc", "rank1",
    "EncoderModel", "predict_labels", "save_checkpoint", "load_checkpoint",
    "SyntheticIdentityDataset", "HetRegDataset", "FuncSpec",
    "gen_identities", "corrupt_fraction", "gen_hetreg",
    "TrainConfig", "TrainLog", "triangular_lr", "gradient_check",
    "train_baseline", "train_dul_cls", "train_dul_rgs", "train_hetreg",
]
