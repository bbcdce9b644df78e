"""Entry point: train the backing model, then serve or self-check."""

from __future__ import annotations

import argparse
import shlex
import sys

from .model import load_corpus, log, train_model
from .server import serve


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="replyshift-bridge",
                                 description="neural backend for the replyshift wire protocol")
    ap.add_argument("--train", required=True, help="corpus file to fit the model on")
    ap.add_argument("--format", choices=("jsonl", "tsv"), default="jsonl")
    ap.add_argument("--tokenizer", choices=("whitespace", "char"), default="whitespace")
    ap.add_argument("--epochs", type=int, default=3,
                    help="0 keeps the seeded random initialization")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--emb-dim", type=int, default=64)
    ap.add_argument("--hidden", type=int, default=128)
    ap.add_argument("--max-ctx", type=int, default=256)
    ap.add_argument("--min-count", type=int, default=1)
    ap.add_argument("--transport", default="stdio",
                    help="stdio (default) or tcp:<port>, 0 for ephemeral")
    ap.add_argument("--selfcheck", action="store_true",
                    help="spawn a copy of this server and run the protocol "
                         "conformance suite against it")
    return ap


def run_selfcheck(args) -> int:
    try:
        from replyshift.wire import run_conformance
    except ImportError:
        print("selfcheck needs the replyshift package installed", file=sys.stderr)
        return 2
    argv = [sys.executable, "-m", "replyshift_bridge",
            "--train", args.train, "--format", args.format,
            "--tokenizer", args.tokenizer, "--epochs", str(args.epochs),
            "--seed", str(args.seed), "--emb-dim", str(args.emb_dim),
            "--hidden", str(args.hidden), "--max-ctx", str(args.max_ctx)]
    spec = "cmd:" + " ".join(shlex.quote(a) for a in argv)
    results = run_conformance(spec)
    width = max(len(k) for k in results)
    ok = True
    for check, passed in results.items():
        print(f"{check.ljust(width)}  {'ok' if passed else 'FAIL'}")
        ok = ok and passed
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.selfcheck:
        return run_selfcheck(args)
    pairs = load_corpus(args.train, args.format, args.tokenizer)
    log(f"loaded {len(pairs)} pairs from {args.train}")
    model = train_model(pairs, seed=args.seed, epochs=args.epochs,
                        emb_dim=args.emb_dim, hidden=args.hidden,
                        max_ctx=args.max_ctx, min_count=args.min_count)
    log(f"vocab {len(model.vocab)}, serving on {args.transport}")
    serve(model, args.transport)
    return 0


if __name__ == "__main__":
    sys.exit(main())
