"""Recall-augmented ranking for CTR prediction."""
from .core import Config, ConfigError, EmbeddingTable, ExposureLog, init_embedding, seed_rng
from .data import Dataset, SyntheticSpec, generate
from .metrics import UndefinedMetric, auc, gauc
from .model import RARModel

__all__ = [
    "Config", "ConfigError", "Dataset", "EmbeddingTable", "ExposureLog", "RARModel", "SyntheticSpec",
    "UndefinedMetric", "auc", "gauc", "generate", "init_embedding", "seed_rng",
]
