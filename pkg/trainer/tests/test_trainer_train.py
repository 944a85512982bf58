"""Training loop, determinism, and checkpoint round trips."""

import torch

from paace_trainer.data import build_masked_example, collate, example_text_pair
from paace_trainer.model import masked_loss
from paace_trainer.train import (
    TrainConfig,
    build_vocab,
    corpus_loss,
    init_model,
    load_checkpoint,
    make_batches,
    save_checkpoint,
    train,
)

CFG = TrainConfig(batch_size=4, max_len=160, seed=0, d_model=32, d_ff=64)


class TestTrain:
    def test_one_epoch_reduces_loss(self, toy_examples):
        result = train(toy_examples, CFG)
        assert result.loss_after < result.loss_before

    def test_same_seed_reproduces_everything(self, toy_examples):
        a = train(toy_examples, CFG)
        b = train(toy_examples, CFG)
        assert a.loss_before == b.loss_before
        assert a.loss_after == b.loss_after
        for ka, kb in zip(a.model.state_dict().values(), b.model.state_dict().values()):
            assert torch.equal(ka, kb)

    def test_init_model_seeded(self, toy_vocab):
        a = init_model(toy_vocab, CFG)
        b = init_model(toy_vocab, CFG)
        c = init_model(toy_vocab, TrainConfig(seed=9, d_model=32, d_ff=64, max_len=160))
        assert all(
            torch.equal(x, y)
            for x, y in zip(a.state_dict().values(), b.state_dict().values())
        )
        assert any(
            not torch.equal(x, y)
            for x, y in zip(a.state_dict().values(), c.state_dict().values())
        )


class TestCorpusLoss:
    def test_token_weighted_mean(self, toy_examples, toy_vocab):
        model = init_model(toy_vocab, CFG)
        batches = make_batches(toy_examples[:6], toy_vocab, CFG)
        total = weight = 0.0
        with torch.no_grad():
            for batch in batches:
                loss = masked_loss(
                    model(batch["input_ids"]), batch["labels"], batch["loss_mask"]
                )
                n = float(batch["loss_mask"].sum().item())
                total += loss.item() * n
                weight += n
        assert corpus_loss(model, batches) == total / weight


class TestCheckpoint:
    def test_round_trip_preserves_outputs(self, toy_examples, tmp_path):
        result = train(toy_examples[:8], CFG)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, result.model, result.vocab)
        loaded, vocab = load_checkpoint(path)
        assert vocab.to_list() == result.vocab.to_list()
        assert loaded.cfg == result.model.cfg
        ex = build_masked_example(
            vocab, *example_text_pair(toy_examples[0]), CFG.max_len
        )
        batch = collate([ex], vocab.pad_id)
        with torch.no_grad():
            assert torch.equal(
                loaded(batch["input_ids"]), result.model(batch["input_ids"])
            )
