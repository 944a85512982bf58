"""Model mechanics: shapes, causality, masked loss, generation."""

import pytest
import torch
import torch.nn.functional as F

from paace_trainer.data import build_masked_example, collate
from paace_trainer.model import ModelConfig, TinyGPT, generate, masked_loss
from paace_trainer.vocab import Vocab


@pytest.fixture
def small():
    torch.manual_seed(1)
    vocab = Vocab.from_texts(["a b c d e f g h"])
    model = TinyGPT(
        ModelConfig(vocab_size=len(vocab), d_model=16, n_heads=2, n_layers=2,
                    d_ff=32, max_len=32)
    )
    model.eval()
    return model, vocab


class TestForward:
    def test_logit_shape(self, small):
        model, vocab = small
        ids = torch.randint(0, len(vocab), (3, 11))
        assert model(ids).shape == (3, 11, len(vocab))

    def test_causality_future_tokens_do_not_leak(self, small):
        model, vocab = small
        ids = torch.randint(0, len(vocab), (1, 12))
        changed = ids.clone()
        changed[0, -1] = (changed[0, -1] + 1) % len(vocab)
        with torch.no_grad():
            assert torch.equal(model(ids)[:, :-1], model(changed)[:, :-1])

    def test_sequence_length_cap(self, small):
        model, vocab = small
        with pytest.raises(ValueError, match="exceeds"):
            model(torch.zeros((1, 33), dtype=torch.long))

    def test_config_validation(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(vocab_size=32, d_model=30, n_heads=4)
        with pytest.raises(ValueError, match="vocab_size"):
            ModelConfig(vocab_size=4)


class TestMaskedLoss:
    def test_matches_manual_average(self):
        torch.manual_seed(2)
        logits = torch.randn(2, 5, 7)
        labels = torch.randint(0, 7, (2, 5))
        mask = torch.tensor([[0, 0, 1, 1, 0], [0, 1, 1, 1, 1]], dtype=torch.float32)
        per_pos = F.cross_entropy(
            logits.reshape(-1, 7), labels.reshape(-1), reduction="none"
        ).reshape(2, 5)
        expected = (per_pos * mask).sum() / mask.sum()
        assert masked_loss(logits, labels, mask).item() == expected.item()

    def test_empty_mask_rejected(self):
        logits = torch.randn(1, 3, 7)
        labels = torch.zeros((1, 3), dtype=torch.long)
        with pytest.raises(ValueError, match="no positions"):
            masked_loss(logits, labels, torch.zeros((1, 3)))

    def test_batch_flows_through_model(self, small):
        model, vocab = small
        examples = [
            build_masked_example(vocab, "a b c", "d e", max_len=32),
            build_masked_example(vocab, "f g", "h", max_len=32),
        ]
        batch = collate(examples, vocab.pad_id)
        loss = masked_loss(model(batch["input_ids"]), batch["labels"], batch["loss_mask"])
        assert torch.isfinite(loss)


class TestGenerate:
    def test_stops_at_end_marker(self, small):
        model, vocab = small
        out = generate(model, vocab.encode("a b"), vocab.eos_id, max_new_tokens=20)
        assert len(out) <= 20
        if vocab.eos_id in out:
            assert out.index(vocab.eos_id) == len(out) - 1

    def test_greedy_is_deterministic(self, small):
        model, vocab = small
        prefix = vocab.encode("a b c")
        first = generate(model, prefix, vocab.eos_id, max_new_tokens=10)
        second = generate(model, prefix, vocab.eos_id, max_new_tokens=10)
        assert first == second
