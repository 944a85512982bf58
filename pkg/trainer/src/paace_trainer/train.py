"""Training loop and checkpoint handling for the toy student."""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from paace_trainer.data import (
    SupervisionExample,
    build_masked_example,
    collate,
    example_text_pair,
)
from paace_trainer.model import ModelConfig, TinyGPT, masked_loss
from paace_trainer.vocab import Vocab


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 8
    lr: float = 3e-3
    max_len: int = 384
    seed: int = 0
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 128

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class TrainResult:
    model: TinyGPT
    vocab: Vocab
    loss_before: float
    loss_after: float


def build_vocab(examples: list[SupervisionExample]) -> Vocab:
    texts = []
    for ex in examples:
        x, y = example_text_pair(ex)
        texts.append(x)
        texts.append(y)
    return Vocab.from_texts(texts)


def make_batches(
    examples: list[SupervisionExample],
    vocab: Vocab,
    cfg: TrainConfig,
    shuffle_seed: int | None = None,
) -> list[dict[str, torch.Tensor]]:
    masked = [
        build_masked_example(vocab, *example_text_pair(ex), cfg.max_len)
        for ex in examples
    ]
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(masked)
    return [
        collate(masked[i : i + cfg.batch_size], vocab.pad_id)
        for i in range(0, len(masked), cfg.batch_size)
    ]


@torch.no_grad()
def corpus_loss(model: TinyGPT, batches: list[dict[str, torch.Tensor]]) -> float:
    """Token-weighted mean masked loss over the whole corpus."""
    model.eval()
    total = 0.0
    weight = 0.0
    for batch in batches:
        loss = masked_loss(model(batch["input_ids"]), batch["labels"], batch["loss_mask"])
        n = float(batch["loss_mask"].sum().item())
        total += loss.item() * n
        weight += n
    return total / weight


def init_model(vocab: Vocab, cfg: TrainConfig) -> TinyGPT:
    torch.manual_seed(cfg.seed)
    model_cfg = ModelConfig(
        vocab_size=len(vocab),
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        n_layers=cfg.n_layers,
        d_ff=cfg.d_ff,
        max_len=cfg.max_len,
    )
    return TinyGPT(model_cfg)


def train(examples: list[SupervisionExample], cfg: TrainConfig) -> TrainResult:
    if not examples:
        raise ValueError("no training examples")
    vocab = build_vocab(examples)
    model = init_model(vocab, cfg)
    eval_batches = make_batches(examples, vocab, cfg)
    loss_before = corpus_loss(model, eval_batches)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr)
    for epoch in range(cfg.epochs):
        model.train()
        for batch in make_batches(examples, vocab, cfg, shuffle_seed=cfg.seed + epoch):
            optimizer.zero_grad()
            loss = masked_loss(
                model(batch["input_ids"]), batch["labels"], batch["loss_mask"]
            )
            loss.backward()
            optimizer.step()
    loss_after = corpus_loss(model, eval_batches)
    return TrainResult(model=model, vocab=vocab, loss_before=loss_before, loss_after=loss_after)


def save_checkpoint(path: str | Path, model: TinyGPT, vocab: Vocab) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "model_config": asdict(model.cfg),
            "vocab": vocab.to_list(),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[TinyGPT, Vocab]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    vocab = Vocab(list(payload["vocab"]))
    model = TinyGPT(ModelConfig(**payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, vocab
