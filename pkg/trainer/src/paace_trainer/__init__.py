"""Training side of the compression pipeline.

Consumes the supervision dataset (JSONL) and the `paace` CLI published by the
pipeline package, trains a small word-level causal LM on (plan slice, context)
-> compressed context tuples, and serves the result behind the same
chat-completions wire format the pipeline's student strategy speaks.
"""

from paace_trainer.data import DatasetError, SupervisionExample, read_supervision
from paace_trainer.model import ModelConfig, TinyGPT, masked_loss
from paace_trainer.train import TrainConfig, load_checkpoint, save_checkpoint, train
from paace_trainer.vocab import Vocab

__all__ = [
    "DatasetError",
    "ModelConfig",
    "SupervisionExample",
    "TinyGPT",
    "TrainConfig",
    "Vocab",
    "load_checkpoint",
    "masked_loss",
    "read_supervision",
    "save_checkpoint",
    "train",
]
