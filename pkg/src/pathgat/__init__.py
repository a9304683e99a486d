"""pathgat: metapath-similarity-enhanced graph attention recommendation."""

__version__ = "0.1.0"

from .graph import (HeteIN, NodeType, RelationType, Schema, SplitSpec, EdgeHoldout,
                    build_hetein, load_hetein, save_hetein, recipe_schema,
                    split_target_edges)
from .metapath import (Metapath, PathCountMatrix, SimilarityTable, HomoGraph,
                       parse_metapath, count_paths, pathsim, top_m_similar,
                       build_homograph)
from .model import ModelConfig, Recommender, EmbeddingScorer
from .train import TrainConfig, TrainingExample, fit, sample_negative, batch_loss
from .evaluate import RankedTrial, EvalReport, rank_trial, metrics_at_k, evaluate

__all__ = [
    "HeteIN", "NodeType", "RelationType", "Schema", "SplitSpec", "EdgeHoldout",
    "build_hetein", "load_hetein", "save_hetein", "recipe_schema",
    "split_target_edges",
    "Metapath", "PathCountMatrix", "SimilarityTable", "HomoGraph",
    "parse_metapath", "count_paths", "pathsim", "top_m_similar", "build_homograph",
    "ModelConfig", "Recommender", "EmbeddingScorer",
    "TrainConfig", "TrainingExample", "fit", "sample_negative", "batch_loss",
    "RankedTrial", "EvalReport", "rank_trial", "metrics_at_k", "evaluate",
    "__version__",
]
