"""Shared fixtures: the toy supervision corpus and tiny models over it."""

import pytest
import torch

from paace_trainer.model import ModelConfig, TinyGPT
from paace_trainer.train import build_vocab
from toy_supervision import make_examples


@pytest.fixture
def toy_examples():
    return make_examples()


@pytest.fixture
def toy_vocab(toy_examples):
    return build_vocab(toy_examples)


@pytest.fixture
def tiny_model(toy_vocab):
    torch.manual_seed(0)
    return TinyGPT(
        ModelConfig(
            vocab_size=len(toy_vocab), d_model=32, n_heads=2, n_layers=2,
            d_ff=64, max_len=160,
        )
    )
