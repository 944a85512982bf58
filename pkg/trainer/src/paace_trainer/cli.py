"""Command line entry points: init, train, eval, serve."""

from __future__ import annotations

import argparse
import json
import sys

from paace_trainer.data import DatasetError, read_supervision
from paace_trainer.serve import start_server
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


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        max_len=args.max_len,
        seed=args.seed,
        d_model=args.d_model,
        n_heads=args.n_heads,
        n_layers=args.n_layers,
        d_ff=args.d_ff,
    )


def cmd_init(args: argparse.Namespace) -> int:
    examples = read_supervision(args.dataset, limit=args.limit)
    cfg = _train_config(args)
    vocab = build_vocab(examples)
    model = init_model(vocab, cfg)
    save_checkpoint(args.out, model, vocab)
    print(json.dumps({"examples": len(examples), "vocab_size": len(vocab)}))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    examples = read_supervision(args.dataset, limit=args.limit)
    cfg = _train_config(args)
    result = train(examples, cfg)
    save_checkpoint(args.out, result.model, result.vocab)
    drop = 1.0 - result.loss_after / result.loss_before if result.loss_before else 0.0
    print(
        json.dumps(
            {
                "examples": len(examples),
                "vocab_size": len(result.vocab),
                "loss_before": result.loss_before,
                "loss_after": result.loss_after,
                "loss_drop": drop,
            }
        )
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    examples = read_supervision(args.dataset, limit=args.limit)
    model, vocab = load_checkpoint(args.checkpoint)
    cfg = _train_config(args)
    batches = make_batches(examples, vocab, cfg)
    print(json.dumps({"examples": len(examples), "loss": corpus_loss(model, batches)}))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    model, vocab = load_checkpoint(args.checkpoint)
    server, _, url = start_server(model, vocab, host=args.host, port=args.port)
    print(f"listening on {url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paace-trainer",
        description="Train and serve a toy context-compression student",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_train_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--dataset", required=True, help="supervision JSONL file")
        p.add_argument("--limit", type=int, default=None, help="use only the first N tuples")
        p.add_argument("--epochs", type=int, default=1)
        p.add_argument("--batch-size", type=int, default=8, dest="batch_size")
        p.add_argument("--lr", type=float, default=3e-3)
        p.add_argument("--max-len", type=int, default=384, dest="max_len")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--d-model", type=int, default=64, dest="d_model")
        p.add_argument("--n-heads", type=int, default=2, dest="n_heads")
        p.add_argument("--n-layers", type=int, default=2, dest="n_layers")
        p.add_argument("--d-ff", type=int, default=128, dest="d_ff")

    p_init = sub.add_parser("init", help="save an untrained model over the dataset vocabulary")
    add_train_flags(p_init)
    p_init.add_argument("--out", required=True, help="checkpoint output path")
    p_init.set_defaults(func=cmd_init)

    p_train = sub.add_parser("train", help="train the student on a supervision dataset")
    add_train_flags(p_train)
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="corpus loss of a checkpoint on a dataset")
    add_train_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_serve = sub.add_parser("serve", help="serve a checkpoint as a compression endpoint")
    p_serve.add_argument("--checkpoint", required=True)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=0)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return 4
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
