"""CLI: extract --corpus --model --strategy --out."""

from __future__ import annotations

import argparse
import sys

from alseq.corpus import ColumnLayout, load_conll, load_corpus_json
from alseq.embeddings import write_embf, write_manifest

from .extract import ExtractionSpec, extract


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="alseq-extract")
    parser.add_argument("--corpus", required=True, help="CoNLL file or corpus.json")
    parser.add_argument("--model", required=True, help="encoder id or local path")
    parser.add_argument("--strategy", choices=("LL", "SL4", "CL4"), default="CL4")
    parser.add_argument("--out", required=True, help="output EMBF path")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--pooling", choices=("mean", "first"), default="mean")
    parser.add_argument("--token-column", type=int, default=0)
    parser.add_argument("--tag-column", type=int, default=-1)
    parser.add_argument("--pos-column", type=int, default=None)
    args = parser.parse_args(argv)

    if args.corpus.endswith(".json"):
        corpus = load_corpus_json(args.corpus)
    else:
        corpus = load_conll(
            args.corpus,
            ColumnLayout(token=args.token_column, tag=args.tag_column, pos=args.pos_column),
        )
    spec = ExtractionSpec(
        model_id=args.model,
        strategy=args.strategy,
        batch_size=args.batch_size,
        device=args.device,
        pooling=args.pooling,
    )
    matrix = extract(corpus, spec)
    write_embf(matrix, args.out)
    write_manifest(args.out, model_id=args.model, strategy=args.strategy)
    print(
        f"wrote {matrix.n_tokens} x {matrix.dim} embeddings to {args.out} "
        f"(strategy {args.strategy})"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
