"""Cross-lingual learning-to-rank with multilingual knowledge-graph fusion."""

__version__ = "0.1.0"

from .autodiff import DimensionError, Tape, TapeError, Tensor
from .data import Dataset, SynthConfig, generate, load_dataset
from .evaluate import evaluate_run, ndcg_at_k
from .fusion import Ablation
from .kg import KGStore, Lexicon
from .model import ModelConfig, Pipeline, Ranker
from .trainer import TrainConfig, train
from .transe import KGEmbeddings, train_transe

__all__ = [
    "Ablation", "Dataset", "DimensionError", "KGEmbeddings", "KGStore",
    "Lexicon", "ModelConfig", "Pipeline", "Ranker", "SynthConfig", "Tape",
    "TapeError", "Tensor", "TrainConfig", "evaluate_run", "generate",
    "load_dataset", "ndcg_at_k", "train", "train_transe", "__version__",
]
