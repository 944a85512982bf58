"""A small word-level causal transformer and its masked training loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 128
    max_len: int = 384

    def __post_init__(self) -> None:
        if self.vocab_size < 8:
            raise ValueError("vocab_size too small")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")


class _Block(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = nn.MultiheadAttention(
            cfg.d_model, cfg.n_heads, batch_first=True
        )
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.d_ff),
            nn.GELU(),
            nn.Linear(cfg.d_ff, cfg.d_model),
        )

    def forward(self, h: torch.Tensor, causal: torch.Tensor) -> torch.Tensor:
        normed = self.ln1(h)
        attn_out, _ = self.attn(
            normed, normed, normed, attn_mask=causal, need_weights=False
        )
        h = h + attn_out
        return h + self.mlp(self.ln2(h))


class TinyGPT(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_len, cfg.d_model)
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)

    def forward(self, input_ids: torch.Tensor) -> torch.Tensor:
        _, length = input_ids.shape
        if length > self.cfg.max_len:
            raise ValueError(f"sequence length {length} exceeds {self.cfg.max_len}")
        positions = torch.arange(length, device=input_ids.device)
        h = self.tok_emb(input_ids) + self.pos_emb(positions)
        causal = torch.triu(
            torch.ones(length, length, dtype=torch.bool, device=input_ids.device),
            diagonal=1,
        )
        for block in self.blocks:
            h = block(h, causal)
        return self.head(self.ln_f(h))


def masked_loss(
    logits: torch.Tensor, labels: torch.Tensor, loss_mask: torch.Tensor
) -> torch.Tensor:
    """Cross-entropy averaged over target-region positions only.

    The mask multiplies per-position losses, so label values at masked-out
    positions cannot affect the result and their logits receive no gradient.
    """
    per_position = F.cross_entropy(
        logits.reshape(-1, logits.size(-1)), labels.reshape(-1), reduction="none"
    ).reshape(labels.shape)
    denom = loss_mask.sum()
    if denom.item() == 0:
        raise ValueError("loss mask selects no positions")
    return (per_position * loss_mask).sum() / denom


@torch.no_grad()
def sequence_logprobs(
    model: TinyGPT, input_ids: torch.Tensor, labels: torch.Tensor
) -> torch.Tensor:
    """Per-position log P(label | prefix) for each row; caller masks/averages."""
    logits = model(input_ids)
    logprobs = F.log_softmax(logits, dim=-1)
    return logprobs.gather(-1, labels.unsqueeze(-1)).squeeze(-1)


@torch.no_grad()
def generate(
    model: TinyGPT, prefix_ids: list[int], eos_id: int, max_new_tokens: int
) -> list[int]:
    """Greedy continuation of a prefix; stops at the end marker."""
    ids = list(prefix_ids)
    for _ in range(max_new_tokens):
        window = ids[-model.cfg.max_len:]
        logits = model(torch.tensor([window], dtype=torch.long))
        next_id = int(logits[0, -1].argmax().item())
        ids.append(next_id)
        if next_id == eos_id:
            break
    return ids[len(prefix_ids):]
