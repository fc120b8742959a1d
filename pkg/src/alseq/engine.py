"""The pool-based query loop: init, query, annotate, retrain, account.

One session owns a train-split pool U and a labeled set L. Initialization
samples 2^m sentences uniformly; the batch at query iteration j is
2^(j+m), capped at the remaining pool. Every iteration is recorded on two
cost axes at once: sentences annotated and tokens annotated.

Sessions persist atomically after every committed iteration, so a killed
run resumes into exactly the state it would have reached uninterrupted.
The deterministic artifacts (curve.csv, state.json) never contain wall
times; timings go to metadata.json.
"""

from __future__ import annotations

import json
import math
import os
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, Sentence, Token
from .crf.evaluate import evaluate
from .crf.model import CrfModel, batch_posteriors, load_model, save_model
from .crf.train import TrainConfig, train
from .embeddings import EmbeddingMatrix
from .positive.pipeline import (
    PositiveIdParams,
    PositiveIdResult,
    identify_positive_tokens,
)
from .scoring import (
    NEEDS_DENSITY,
    NEEDS_POSITIVE_SET,
    AggregationStrategy,
    SentenceScore,
    TokenCountDensity,
    UncertaintyMeasure,
    baseline_score,
    fit_token_count_density,
    rank_select,
    score_sentence,
    strategy_label,
)

STATE_FILE = "state.json"
CURVE_FILE = "curve.csv"
MODEL_FILE = "model.npz"
CONFIG_FILE = "config.json"
METADATA_FILE = "metadata.json"


@dataclass(frozen=True)
class ALConfig:
    m: int = 4  # initial batch = 2^m sentences
    measure: UncertaintyMeasure = UncertaintyMeasure.TE
    strategy: AggregationStrategy = AggregationStrategy.TOTAL_POS
    max_iterations: int = 10
    n_repeats: int = 9
    base_seed: int = 0
    target_f1: float | None = None
    token_budget: int | None = None
    sentence_budget: int | None = None
    stop_on_plateau: bool = False
    plateau_delta: float = 0.002
    plateau_window: int = 2
    positive_params: PositiveIdParams = field(default_factory=PositiveIdParams)
    train_config: TrainConfig = field(default_factory=TrainConfig)
    recompute_positive: bool = True  # False: one unsupervised pass reused all run

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be >= 0")
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")

    @property
    def label(self) -> str:
        return strategy_label(self.strategy, self.measure)


def batch_size(j: int, m: int, pool_size: int | None = None) -> int:
    """|q_j| = 2^(j+m), optionally capped at the remaining pool."""
    size = 2 ** (j + m)
    if pool_size is not None:
        size = min(size, pool_size)
    return size


@dataclass
class CostLedger:
    sentence_deltas: list[int] = field(default_factory=list)
    token_deltas: list[int] = field(default_factory=list)

    @property
    def sentences(self) -> int:
        return sum(self.sentence_deltas)

    @property
    def tokens(self) -> int:
        return sum(self.token_deltas)

    def record(self, n_sentences: int, n_tokens: int) -> None:
        self.sentence_deltas.append(n_sentences)
        self.token_deltas.append(n_tokens)


@dataclass(frozen=True)
class CurvePoint:
    iteration: int
    sentences: int
    tokens: int
    precision: float
    recall: float
    f1: float


def curve_to_csv_lines(curve: list[CurvePoint]) -> list[str]:
    lines = ["iteration,sentences,tokens,precision,recall,f1"]
    for p in curve:
        lines.append(
            f"{p.iteration},{p.sentences},{p.tokens},"
            f"{p.precision:.12g},{p.recall:.12g},{p.f1:.12g}"
        )
    return lines


def tokens_to_reach(curve: list[CurvePoint], f1_level: float) -> float | None:
    """Cumulative annotated tokens at which the curve first reaches f1_level.

    Linearly interpolated on the token axis between the bracketing
    iterations; None when the level is never reached.
    """
    if not curve:
        raise ValueError("empty learning curve")
    for i, point in enumerate(curve):
        if point.f1 >= f1_level:
            if i == 0:
                return float(point.tokens)
            prev = curve[i - 1]
            if point.f1 == prev.f1:
                return float(point.tokens)
            frac = (f1_level - prev.f1) / (point.f1 - prev.f1)
            return float(prev.tokens + frac * (point.tokens - prev.tokens))
    return None


def sentences_to_reach(curve: list[CurvePoint], f1_level: float) -> float | None:
    for i, point in enumerate(curve):
        if point.f1 >= f1_level:
            if i == 0:
                return float(point.sentences)
            prev = curve[i - 1]
            if point.f1 == prev.f1:
                return float(point.sentences)
            frac = (f1_level - prev.f1) / (point.f1 - prev.f1)
            return float(prev.sentences + frac * (point.sentences - prev.sentences))
    return None


def _sentence_with_tags(sentence: Sentence, tags: tuple[int, ...]) -> Sentence:
    """Copy of the sentence carrying acquired tags; global indices unchanged."""
    if len(tags) != sentence.n_tokens:
        raise ValueError("acquired tag count does not match sentence length")
    tokens = tuple(
        Token(t.surface, int(tag), t.global_index, t.pos_tag)
        for t, tag in zip(sentence.tokens, tags)
    )
    return Sentence(id=sentence.id, tokens=tokens)


class SessionError(RuntimeError):
    pass


class ALSession:
    """One seeded pool-based labeling session over a fixed train/test split.

    Drives both simulation (gold labels copied by the oracle) and
    interactive mode (labels submitted through the service); the state
    machine is: awaiting_annotation -> training -> ready -> ... -> completed.
    """

    def __init__(
        self,
        corpus: Corpus,
        embeddings: EmbeddingMatrix,
        train_ids: tuple[int, ...],
        test_ids: tuple[int, ...],
        config: ALConfig,
        seed: int,
        session_dir: str | Path | None = None,
        session_id: str | None = None,
    ):
        if 2**config.m > len(train_ids):
            raise SessionError(
                f"initial batch 2^{config.m} exceeds train split of {len(train_ids)}"
            )
        self.corpus = corpus
        self.embeddings = embeddings
        self.train_ids = tuple(sorted(train_ids))
        self.test_ids = tuple(sorted(test_ids))
        self.config = config
        self.seed = seed
        self.session_dir = Path(session_dir) if session_dir else None
        self.session_id = session_id or f"session-{seed}"

        self.rng = np.random.default_rng(seed)
        self.labeled_order: list[int] = []
        self.labels: dict[int, tuple[int, ...]] = {}
        self.pool: list[int] = list(self.train_ids)
        self.pending_batch: list[int] = []
        self.pending_labels: dict[int, tuple[int, ...]] = {}
        self.model: CrfModel | None = None
        self.ledger = CostLedger()
        self.curve: list[CurvePoint] = []
        self.status = "new"
        self.density: TokenCountDensity = fit_token_count_density(
            np.array([corpus.sentences[i].n_tokens for i in self.train_ids], dtype=float)
        )
        self.positive_cache: PositiveIdResult | None = None
        self.last_positive: PositiveIdResult | None = None
        self.keyed_cache: dict = {}
        self.timings: list[dict] = []
        self._train_token_rows = np.array(
            [g for i in self.train_ids for g in corpus.sentences[i].global_indices],
            dtype=np.int64,
        )
        if self.session_dir:
            self.session_dir.mkdir(parents=True, exist_ok=True)

    # ------------------------------------------------------------------ state

    @property
    def next_iteration(self) -> int:
        return len(self.curve)

    @property
    def test_sentences(self) -> list[Sentence]:
        return [self.corpus.sentences[i] for i in self.test_ids]

    def labeled_sentences(self) -> list[Sentence]:
        return [
            _sentence_with_tags(self.corpus.sentences[i], self.labels[i])
            for i in self.labeled_order
        ]

    def stop_reason(self) -> str | None:
        cfg = self.config
        if self.next_iteration > 0 and not self.pool:
            return "pool_exhausted"
        if self.next_iteration > cfg.max_iterations:
            return "max_iterations"
        if cfg.target_f1 is not None and self.curve and self.curve[-1].f1 >= cfg.target_f1:
            return "target_f1"
        if cfg.token_budget is not None and self.ledger.tokens >= cfg.token_budget:
            return "token_budget"
        if (
            cfg.sentence_budget is not None
            and self.ledger.sentences >= cfg.sentence_budget
        ):
            return "sentence_budget"
        if cfg.stop_on_plateau and len(self.curve) > cfg.plateau_window:
            recent = [p.f1 for p in self.curve[-(cfg.plateau_window + 1) :]]
            if max(recent) - recent[0] < cfg.plateau_delta:
                return "plateau"
        return None

    # ------------------------------------------------------------------ query

    def propose_batch(self) -> list[int]:
        """Select the next query batch and hold it pending annotation."""
        if self.pending_batch:
            return self.pending_batch
        reason = self.stop_reason()
        if reason is not None:
            self.status = "completed"
            self._persist()
            return []
        j = self.next_iteration
        k = batch_size(j, self.config.m, len(self.pool))
        if j == 0:
            chosen = self.rng.choice(np.array(self.pool), size=k, replace=False)
            self.pending_batch = sorted(int(i) for i in chosen)
        else:
            self.pending_batch = self._score_pool(k)
        self.pending_labels = {}
        self.status = "awaiting_annotation"
        return self.pending_batch

    def _score_pool(self, k: int) -> list[int]:
        cfg = self.config
        positive_tokens = None
        if cfg.strategy in NEEDS_POSITIVE_SET:
            positive_tokens = self._positive_tokens()
        density = self.density if cfg.strategy in NEEDS_DENSITY else None

        pool_sentences = [self.corpus.sentences[i] for i in self.pool]
        scores: list[SentenceScore] = []
        if cfg.strategy in (AggregationStrategy.RANDOM, AggregationStrategy.LSS,
                            AggregationStrategy.PAS):
            for sent in pool_sentences:
                scores.append(
                    baseline_score(
                        cfg.strategy, sent, positive_tokens, self.density, self.rng
                    )
                )
        else:
            batch = self.model.featurize(pool_sentences, self.embeddings, self.keyed_cache)
            marginals, paths = batch_posteriors(self.model, batch)
            for sent, marg, vit in zip(pool_sentences, marginals, paths):
                scores.append(
                    score_sentence(
                        cfg.strategy, cfg.measure, sent, marg, vit,
                        positive_tokens, density,
                    )
                )
        return rank_select(scores, k)

    def _positive_tokens(self) -> frozenset:
        cfg = self.config
        if not cfg.recompute_positive and self.positive_cache is not None:
            return self.positive_cache.positive_set.tokens
        t0 = time.perf_counter()
        rows = self.embeddings.take(self._train_token_rows)
        if cfg.recompute_positive:
            supervision = self._supervision_labels()
        else:
            supervision = None  # one unsupervised pass, reused every iteration
        result = identify_positive_tokens(
            rows,
            supervision,
            self._train_token_rows,
            cfg.positive_params,
            seed=self.seed,
        )
        self.last_positive = result
        if not cfg.recompute_positive:
            self.positive_cache = result
        self.timings.append(
            {"iteration": self.next_iteration, "positive_id_seconds": time.perf_counter() - t0}
        )
        return result.positive_set.tokens

    def _supervision_labels(self) -> np.ndarray:
        """Class index per train-split token row; -1 when not yet labeled."""
        scheme = self.corpus.label_scheme
        by_global: dict[int, int] = {}
        for sid in self.labeled_order:
            sent = self.corpus.sentences[sid]
            for tok, tag in zip(sent.tokens, self.labels[sid]):
                name = scheme.tag_name(int(tag))
                cls = 0 if name == "O" else 1 + scheme.entity_classes.index(name[2:])
                by_global[tok.global_index] = cls
        return np.array(
            [by_global.get(int(g), -1) for g in self._train_token_rows],
            dtype=np.int64,
        )

    # ------------------------------------------------------------- annotation

    def submit_labels(self, labels: dict[int, tuple[int, ...]]) -> None:
        """Accept (possibly partial) annotations for the pending batch."""
        if not self.pending_batch:
            raise SessionError("no pending batch to annotate")
        pending = set(self.pending_batch)
        for sid, tags in labels.items():
            if sid not in pending:
                raise SessionError(f"sentence {sid} is not in the pending batch")
            sent = self.corpus.sentences[sid]
            if len(tags) != sent.n_tokens:
                raise SessionError(
                    f"sentence {sid}: {len(tags)} tags for {sent.n_tokens} tokens"
                )
            M = self.corpus.label_scheme.n_tags
            if any(not (0 <= int(t) < M) for t in tags):
                raise SessionError(f"sentence {sid}: tag index outside label scheme")
            self.pending_labels[sid] = tuple(int(t) for t in tags)

    def batch_complete(self) -> bool:
        return bool(self.pending_batch) and all(
            sid in self.pending_labels for sid in self.pending_batch
        )

    def oracle_annotate(self) -> None:
        """Simulation mode: copy gold tags for the whole pending batch."""
        self.submit_labels(
            {
                sid: self.corpus.sentences[sid].tag_ids
                for sid in self.pending_batch
            }
        )

    # ----------------------------------------------------------------- commit

    def commit(self) -> CurvePoint:
        """Fold the annotated batch into L, retrain, evaluate, persist."""
        if not self.batch_complete():
            raise SessionError("pending batch is not fully annotated")
        self.status = "training"
        batch = list(self.pending_batch)
        t0 = time.perf_counter()

        n_tokens = 0
        pool_set = set(self.pool)
        for sid in batch:
            pool_set.remove(sid)
            self.labeled_order.append(sid)
            self.labels[sid] = self.pending_labels[sid]
            n_tokens += self.corpus.sentences[sid].n_tokens
        self.pool = sorted(pool_set)
        self.ledger.record(len(batch), n_tokens)
        self.pending_batch = []
        self.pending_labels = {}

        self.model = train(
            self.labeled_sentences(),
            self.embeddings,
            self.corpus.label_scheme,
            self.config.train_config,
            has_pos=self.corpus.has_pos,
            keyed_cache=self.keyed_cache,
        )
        metrics = evaluate(
            self.model, self.test_sentences, self.embeddings, self.keyed_cache
        )
        point = CurvePoint(
            iteration=self.next_iteration,
            sentences=self.ledger.sentences,
            tokens=self.ledger.tokens,
            precision=metrics["precision"],
            recall=metrics["recall"],
            f1=metrics["f1"],
        )
        self.curve.append(point)
        self.timings.append(
            {"iteration": point.iteration, "train_eval_seconds": time.perf_counter() - t0}
        )
        self.status = "ready" if self.stop_reason() is None else "completed"
        self._persist()
        return point

    def step(self) -> CurvePoint | None:
        """One oracle-mode iteration; None when the session is finished."""
        batch = self.propose_batch()
        if not batch:
            return None
        self.oracle_annotate()
        return self.commit()

    def run(self) -> list[CurvePoint]:
        while self.step() is not None:
            pass
        return self.curve

    # ------------------------------------------------------------ persistence

    def _persist(self) -> None:
        if not self.session_dir:
            return
        state = {
            "session_id": self.session_id,
            "seed": self.seed,
            "status": self.status,
            "labeled_order": self.labeled_order,
            "labels": {str(k): list(v) for k, v in self.labels.items()},
            "pool": self.pool,
            "pending_batch": self.pending_batch,
            "pending_labels": {str(k): list(v) for k, v in self.pending_labels.items()},
            "rng_state": self.rng.bit_generator.state,
            "sentence_deltas": self.ledger.sentence_deltas,
            "token_deltas": self.ledger.token_deltas,
            "curve": [vars(p) for p in self.curve],
            "corpus_hash": self.corpus.manifest_hash,
            "train_ids": list(self.train_ids),
            "test_ids": list(self.test_ids),
        }
        tmp = self.session_dir / (STATE_FILE + ".tmp")
        tmp.write_text(json.dumps(state), encoding="utf-8")
        os.replace(tmp, self.session_dir / STATE_FILE)

        tmp = self.session_dir / (CURVE_FILE + ".tmp")
        tmp.write_text("\n".join(curve_to_csv_lines(self.curve)) + "\n", encoding="utf-8")
        os.replace(tmp, self.session_dir / CURVE_FILE)

        if self.model is not None:
            tmp = self.session_dir / (MODEL_FILE + ".tmp")
            with open(tmp, "wb") as fh:
                save_model(self.model, fh)
            os.replace(tmp, self.session_dir / MODEL_FILE)

        (self.session_dir / METADATA_FILE).write_text(
            json.dumps({"timings": self.timings, "session_id": self.session_id}),
            encoding="utf-8",
        )

    @classmethod
    def resume(
        cls,
        session_dir: str | Path,
        corpus: Corpus,
        embeddings: EmbeddingMatrix,
        config: ALConfig,
    ) -> "ALSession":
        session_dir = Path(session_dir)
        state = json.loads((session_dir / STATE_FILE).read_text(encoding="utf-8"))
        if state["corpus_hash"] != corpus.manifest_hash:
            raise SessionError("session was created from a different corpus")
        session = cls(
            corpus,
            embeddings,
            tuple(state["train_ids"]),
            tuple(state["test_ids"]),
            config,
            seed=state["seed"],
            session_dir=session_dir,
            session_id=state["session_id"],
        )
        session.labeled_order = [int(i) for i in state["labeled_order"]]
        session.labels = {
            int(k): tuple(v) for k, v in state["labels"].items()
        }
        session.pool = [int(i) for i in state["pool"]]
        session.pending_batch = [int(i) for i in state["pending_batch"]]
        session.pending_labels = {
            int(k): tuple(v) for k, v in state["pending_labels"].items()
        }
        session.rng.bit_generator.state = state["rng_state"]
        session.ledger = CostLedger(
            [int(x) for x in state["sentence_deltas"]],
            [int(x) for x in state["token_deltas"]],
        )
        session.curve = [CurvePoint(**p) for p in state["curve"]]
        session.status = state["status"]
        model_path = session_dir / MODEL_FILE
        if model_path.exists():
            session.model = load_model(model_path)
        return session


@dataclass
class RunSummary:
    """Mean and SEM of the learning curve across seeded repeats."""

    label: str
    seeds: list[int]
    curves: list[list[CurvePoint]]
    failures: list[str] = field(default_factory=list)

    @property
    def iterations(self) -> list[int]:
        if not self.curves:
            return []
        return [p.iteration for p in min(self.curves, key=len)]

    def _stat(self, attr: str) -> tuple[np.ndarray, np.ndarray | None]:
        n_iter = len(self.iterations)
        values = np.array(
            [[getattr(c[i], attr) for i in range(n_iter)] for c in self.curves]
        )
        mean = values.mean(axis=0)
        if len(self.curves) < 2:
            return mean, None
        sem = values.std(axis=0, ddof=1) / math.sqrt(len(self.curves))
        return mean, sem

    def mean_f1(self):
        return self._stat("f1")

    def mean_tokens(self):
        return self._stat("tokens")

    def mean_sentences(self):
        return self._stat("sentences")

    def mean_tokens_to_reach(self, f1_level: float) -> float | None:
        values = [tokens_to_reach(c, f1_level) for c in self.curves]
        if any(v is None for v in values):
            return None
        return float(np.mean(values))

    def mean_sentences_to_reach(self, f1_level: float) -> float | None:
        values = [sentences_to_reach(c, f1_level) for c in self.curves]
        if any(v is None for v in values):
            return None
        return float(np.mean(values))

    def to_json(self) -> dict:
        mean_f1, sem_f1 = self.mean_f1()
        mean_tok, _ = self.mean_tokens()
        mean_sent, _ = self.mean_sentences()
        return {
            "label": self.label,
            "seeds": self.seeds,
            "iterations": self.iterations,
            "mean_f1": mean_f1.tolist(),
            "sem_f1": None if sem_f1 is None else sem_f1.tolist(),
            "mean_tokens": mean_tok.tolist(),
            "mean_sentences": mean_sent.tolist(),
            "failures": self.failures,
            "curves": [[vars(p) for p in c] for c in self.curves],
        }


def run_experiment(
    corpus: Corpus,
    embeddings: EmbeddingMatrix,
    train_ids: tuple[int, ...],
    test_ids: tuple[int, ...],
    config: ALConfig,
    out_dir: str | Path | None = None,
) -> RunSummary:
    """n_repeats independent sessions with seeds base_seed..base_seed+n-1.

    Sessions sharing a seed across strategy configs draw the identical
    initial labeled set, which is what makes strategies comparable.
    """
    out_dir = Path(out_dir) if out_dir else None
    curves = []
    seeds = []
    failures = []
    for r in range(config.n_repeats):
        seed = config.base_seed + r
        session_dir = out_dir / f"seed-{seed}" if out_dir else None
        session = ALSession(
            corpus, embeddings, train_ids, test_ids, config, seed, session_dir
        )
        try:
            curves.append(session.run())
            seeds.append(seed)
        except Exception as exc:  # record, keep the remaining repeats running
            failures.append(f"seed {seed}: {exc}")
            warnings.warn(f"session failed for seed {seed}: {exc}", RuntimeWarning)
    if failures and not curves:
        raise SessionError("all repeats failed: " + "; ".join(failures))
    summary = RunSummary(
        label=config.label, seeds=seeds, curves=curves, failures=failures
    )
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.json").write_text(
            json.dumps(summary.to_json()), encoding="utf-8"
        )
    return summary
