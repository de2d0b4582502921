"""Conversation grading with hierarchical graph models.

Builds word, action and discourse graphs over a conversation, encodes
them with graph attention on top of a windowed sequence encoder, and
regresses a holistic 1-9 score.
"""

from .config import TrainConfig, load_synth_config, load_train_config
from .corpus import (Conversation, DiscourseLink, Response, SpoTriplet,
                     SynthConfig, load_corpus, parse_corpus, save_corpus,
                     split_dataset, synth_generate, tokenize)
from .encoder import Vocab
from .errors import (CheckpointError, ConfigError, ContractError, GraderError,
                     NumericError, ShapeError, TrainingAborted, ValidationError)
from .graphs import GraphBundle, build_bundle, validate_bundle
from .metrics import EvalMetrics, MetricsReport, evaluate_predictions
from .model import GradingModel, ModelConfig
from .node_features import WordVecTable
from .params import ParamStore, load_params, save_params
from .training import ablate, evaluate, multi_seed_run, train, two_stage_train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "ContractError", "Conversation",
    "DiscourseLink", "EvalMetrics", "GraderError", "GradingModel",
    "GraphBundle", "MetricsReport", "ModelConfig", "NumericError",
    "ParamStore", "Response", "ShapeError", "SpoTriplet", "SynthConfig",
    "TrainConfig", "TrainingAborted", "ValidationError", "Vocab",
    "WordVecTable", "ablate", "build_bundle", "evaluate",
    "evaluate_predictions", "load_corpus", "load_params",
    "load_synth_config", "load_train_config", "multi_seed_run",
    "parse_corpus", "save_corpus", "save_params", "split_dataset",
    "synth_generate", "tokenize", "train", "two_stage_train",
    "validate_bundle", "__version__",
]
