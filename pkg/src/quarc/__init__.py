"""Quaternion multi-modal fusion classifiers with a self-contained autodiff.

The public surface: quaternion arithmetic (`quat`), the tape machinery
(`autodiff`), layer kit (`layers`), fusion blocks (`fusion`), the seven
model variants (`models`), dataset tooling (`data`), metrics, training and
checkpoints.  The `quarc` console script wraps the common workflows.
"""

from .config import ModelConfig, load_config, parse_config
from .checkpoint import load_checkpoint, load_model, save_checkpoint
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    IngestionError,
    MetricError,
    NumericError,
    PackingError,
    QuarcError,
)
from .metrics import average_precision, roc_auc
from .models import Model, build_variant, count_params, ratio_report
from .quat import QTensor, Quaternion, hamilton
from .train import Adam, TrainReport, evaluate, softmax_bce_loss, train_loop

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "IngestionError",
    "MetricError",
    "Model",
    "ModelConfig",
    "NumericError",
    "PackingError",
    "QTensor",
    "Quaternion",
    "QuarcError",
    "TrainReport",
    "average_precision",
    "build_variant",
    "count_params",
    "evaluate",
    "hamilton",
    "load_checkpoint",
    "load_config",
    "load_model",
    "parse_config",
    "ratio_report",
    "roc_auc",
    "save_checkpoint",
    "softmax_bce_loss",
    "train_loop",
    "__version__",
]
