"""Multi-token composed image retrieval with iterative dual self-training on a synthetic world."""

from .captioner import CaptionerConfig, DiffCaptioner, train_captioner
from .model import NetConfig, RetrievalNet
from .selftrain import AttributeBagPort, MatcherPort, MiningStrategy, mine_pairs, run_paradigm
from .synthio import Catalog, Item, Pair, Triplet, generate_catalog, make_triplets, split_triplets
from .trainer import Checkpoint, RecallReport, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AttributeBagPort",
    "CaptionerConfig",
    "Catalog",
    "Checkpoint",
    "DiffCaptioner",
    "Item",
    "MatcherPort",
    "MiningStrategy",
    "NetConfig",
    "Pair",
    "RecallReport",
    "RetrievalNet",
    "TrainConfig",
    "Triplet",
    "evaluate",
    "generate_catalog",
    "make_triplets",
    "mine_pairs",
    "run_paradigm",
    "split_triplets",
    "train",
    "train_captioner",
]
