"""LSTM language models with an embedding-derived augmented loss and weight tying."""
from .corpus import EOS, UNK, TokenStream, Vocabulary, batchify, load_corpus, load_splits
from .loss import LossConfig, total_loss
from .net import ModelConfig, ModelParams, init_params, load_checkpoint, save_checkpoint
from .subspace import SubspaceReport, model_subspace_distance, subspace_distance
from .trainer import TrainConfig, evaluate_perplexity, profile_config, train

__version__ = "0.1.0"

__all__ = [
    "EOS", "UNK", "TokenStream", "Vocabulary", "batchify", "load_corpus", "load_splits",
    "LossConfig", "total_loss", "ModelConfig", "ModelParams", "init_params", "load_checkpoint",
    "save_checkpoint", "SubspaceReport", "model_subspace_distance", "subspace_distance",
    "TrainConfig", "evaluate_perplexity", "profile_config", "train",
]
