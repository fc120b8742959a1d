"""Command-line entry points: ingest | run | serve | report."""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config, prepare_inputs
from .corpus import corpus_stats, save_corpus_json
from .engine import run_experiment
from .report import build_report


def _git_hash() -> str | None:
    try:
        return (
            subprocess.run(
                ["git", "rev-parse", "HEAD"],
                capture_output=True,
                text=True,
                timeout=5,
                check=True,
            ).stdout.strip()
        )
    except Exception:
        return None


def _resolve_out(args, config) -> Path:
    out = args.out or config.output_dir
    if not out:
        raise ConfigError("no output directory: pass --out or set output_dir")
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(
            f"output directory {out} is not empty; pass --force to reuse it"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_ingest(args) -> int:
    config = load_config(args.config)
    out = _resolve_out(args, config)
    corpus, embeddings, split = prepare_inputs(config)
    stats = corpus_stats(corpus)
    save_corpus_json(corpus, out / "corpus.json")
    payload = {
        "stats": stats,
        "manifest_hash": corpus.manifest_hash,
        "embedding_dim": embeddings.dim,
        "split_sizes": {
            "train": len(split.train),
            "validation": len(split.validation),
            "test": len(split.test),
        },
    }
    (out / "ingest.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(json.dumps(payload, indent=2))
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config)
    out = _resolve_out(args, config)
    corpus, embeddings, split = prepare_inputs(config)
    al_config = config.build_al_config()
    if args.seed_offset:
        from dataclasses import replace

        al_config = replace(al_config, base_seed=al_config.base_seed + args.seed_offset)

    (out / "config.json").write_text(
        config.model_dump_json(indent=2), encoding="utf-8"
    )
    started = time.time()
    summary = run_experiment(
        corpus, embeddings, split.train, split.test, al_config, out_dir=out
    )
    meta = {
        "version": __version__,
        "git_hash": _git_hash(),
        "strategy": summary.label,
        "seeds": summary.seeds,
        "failures": summary.failures,
        "wall_seconds": time.time() - started,
    }
    (out / "run_metadata.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    mean_f1, sem_f1 = summary.mean_f1()
    for i, it in enumerate(summary.iterations):
        sem_txt = "n/a" if sem_f1 is None else f"{sem_f1[i]:.4f}"
        print(f"iteration {it}: F1 {mean_f1[i]:.4f} ± {sem_txt}")
    if summary.failures:
        print(f"warning: {len(summary.failures)} failed repeats", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .engine import ALConfig
    from .service import RegisteredCorpus, ServiceRegistry, make_app

    config = load_config(args.config)
    corpus, embeddings, split = prepare_inputs(config)
    registry = ServiceRegistry(
        corpora={
            args.corpus_id: RegisteredCorpus(
                corpus=corpus,
                embeddings=embeddings,
                train_ids=split.train,
                test_ids=split.test,
                base_config=config.build_al_config(),
            )
        },
        sessions_root=Path(args.out) if args.out else None,
    )
    app = make_app(registry, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_report(args) -> int:
    text = build_report(args.run_dirs, levels=args.levels, out_dir=args.out)
    print(text)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="alseq")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="load, validate, and snapshot a corpus")
    p_ingest.add_argument("--config", required=True)
    p_ingest.add_argument("--out")
    p_ingest.add_argument("--force", action="store_true")
    p_ingest.set_defaults(func=cmd_ingest)

    p_run = sub.add_parser("run", help="execute a seeded multi-repeat experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out")
    p_run.add_argument("--force", action="store_true")
    p_run.add_argument("--seed-offset", type=int, default=0)
    p_run.set_defaults(func=cmd_run)

    p_serve = sub.add_parser("serve", help="start the annotation HTTP service")
    p_serve.add_argument("--config", required=True)
    p_serve.add_argument("--corpus-id", default="default")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8077)
    p_serve.add_argument("--out", help="directory for persisted sessions")
    p_serve.add_argument("--ui", help="static directory with the annotator UI build")
    p_serve.set_defaults(func=cmd_serve)

    p_report = sub.add_parser("report", help="compare completed run directories")
    p_report.add_argument("run_dirs", nargs="+")
    p_report.add_argument("--levels", type=float, nargs="*", default=None)
    p_report.add_argument("--out")
    p_report.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
