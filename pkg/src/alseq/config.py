"""Experiment configuration schema and loaders.

Config files are JSON, validated strictly: unknown keys are rejected and
errors name the offending key path. A config fully determines a run, so a
persisted snapshot is enough to reproduce it.
"""

from __future__ import annotations

import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .corpus import (
    ColumnLayout,
    Corpus,
    Split,
    load_conll,
    load_corpus_json,
    load_split_files,
    split_corpus,
)
from .crf.train import TrainConfig
from .embeddings import (
    EmbeddingMatrix,
    fit_pca,
    load_embeddings,
    reduce_embeddings,
    separated_means,
    synth_embeddings,
)
from .engine import ALConfig
from .positive.pipeline import PositiveIdParams
from .scoring import AggregationStrategy, UncertaintyMeasure
from .synth import SynthCorpusSpec, make_synthetic_corpus


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticCorpusConfig(_Strict):
    n_sentences: int = Field(ge=1)
    entity_classes: list[str] = ["X", "Y"]
    typical_length: tuple[int, int] = (6, 14)
    spans_per_typical: tuple[int, int] = (1, 2)
    fragment_fraction: float = Field(default=0.0, ge=0.0, le=1.0)
    filler_fraction: float = Field(default=0.0, ge=0.0, le=1.0)
    seed: int = 0


class CorpusConfig(_Strict):
    path: str | None = None
    token_column: int = 0
    tag_column: int = -1
    pos_column: int | None = None
    synthetic: SyntheticCorpusConfig | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.path is None) == (self.synthetic is None):
            raise ValueError("corpus needs exactly one of 'path' or 'synthetic'")
        return self


class SyntheticEmbeddingConfig(_Strict):
    dim: int = Field(ge=1)
    separation: float = 8.0
    noise_scale: float = 1.0
    seed: int = 0


class EmbeddingConfig(_Strict):
    path: str | None = None
    synthetic: SyntheticEmbeddingConfig | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.path is None) == (self.synthetic is None):
            raise ValueError("embeddings need exactly one of 'path' or 'synthetic'")
        return self


class SplitFilesConfig(_Strict):
    train: str
    validation: str
    test: str


class SplitConfig(_Strict):
    fractions: tuple[float, float, float] | None = None
    seed: int = 0
    files: SplitFilesConfig | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.fractions is None) == (self.files is None):
            raise ValueError("split needs exactly one of 'fractions' or 'files'")
        return self


class PcaConfig(_Strict):
    n_components: int | None = Field(default=None, ge=1)
    variance_target: float | None = Field(default=None, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _one_target(self):
        if (self.n_components is None) == (self.variance_target is None):
            raise ValueError("pca needs exactly one of 'n_components' or 'variance_target'")
        return self


class PositiveConfig(_Strict):
    n_neighbors: int = Field(default=15, ge=2)
    min_cluster_size: int | None = Field(default=None, ge=2)
    min_samples: int | None = Field(default=None, ge=1)
    outlier_fraction: float = Field(default=0.01, ge=0.0, le=1.0)
    noise_in_positive: bool = False
    outliers_within_largest_only: bool = False
    n_epochs: int | None = None

    def build(self) -> PositiveIdParams:
        return PositiveIdParams(**self.model_dump())


class TrainSection(_Strict):
    max_iterations: int = Field(default=100, ge=1)
    epsilon: float = 1e-5
    stop_period: int = 10
    stop_delta: float = 1e-5
    c1: float = Field(default=0.1, ge=0.0)
    c2: float = Field(default=0.1, ge=0.0)
    line_search_max_trials: int = Field(default=20, ge=1)
    allow_unobserved: bool = True
    use_l1: bool = True

    def build(self) -> TrainConfig:
        return TrainConfig(**self.model_dump())


class ALSection(_Strict):
    m: int = Field(default=4, ge=0)
    measure: UncertaintyMeasure = UncertaintyMeasure.TE
    strategy: AggregationStrategy = AggregationStrategy.TOTAL_POS
    max_iterations: int = Field(default=10, ge=0)
    n_repeats: int = Field(default=9, ge=1)
    base_seed: int = 0
    target_f1: float | None = None
    token_budget: int | None = None
    sentence_budget: int | None = None
    stop_on_plateau: bool = False
    plateau_delta: float = 0.002
    plateau_window: int = 2
    recompute_positive: bool = True


class ExperimentConfig(_Strict):
    corpus: CorpusConfig
    embeddings: EmbeddingConfig
    split: SplitConfig
    al: ALSection
    train: TrainSection = TrainSection()
    positive: PositiveConfig = PositiveConfig()
    pca: PcaConfig | None = None
    output_dir: str | None = None

    def build_al_config(self) -> ALConfig:
        return ALConfig(
            m=self.al.m,
            measure=self.al.measure,
            strategy=self.al.strategy,
            max_iterations=self.al.max_iterations,
            n_repeats=self.al.n_repeats,
            base_seed=self.al.base_seed,
            target_f1=self.al.target_f1,
            token_budget=self.al.token_budget,
            sentence_budget=self.al.sentence_budget,
            stop_on_plateau=self.al.stop_on_plateau,
            plateau_delta=self.al.plateau_delta,
            plateau_window=self.al.plateau_window,
            positive_params=self.positive.build(),
            train_config=self.train.build(),
            recompute_positive=self.al.recompute_positive,
        )


class ConfigError(ValueError):
    pass


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "(root)"
            lines.append(f"{loc}: {err['msg']}")
        raise ConfigError("invalid config: " + "; ".join(lines)) from exc


def load_corpus_from_config(cfg: CorpusConfig) -> Corpus:
    if cfg.synthetic is not None:
        s = cfg.synthetic
        return make_synthetic_corpus(
            SynthCorpusSpec(
                n_sentences=s.n_sentences,
                entity_classes=tuple(s.entity_classes),
                typical_length=s.typical_length,
                spans_per_typical=s.spans_per_typical,
                fragment_fraction=s.fragment_fraction,
                filler_fraction=s.filler_fraction,
            ),
            seed=s.seed,
        )
    path = Path(cfg.path)
    if path.suffix == ".json":
        return load_corpus_json(path)
    return load_conll(
        path,
        ColumnLayout(token=cfg.token_column, tag=cfg.tag_column, pos=cfg.pos_column),
    )


def load_embeddings_from_config(cfg: EmbeddingConfig, corpus: Corpus) -> EmbeddingMatrix:
    if cfg.synthetic is not None:
        s = cfg.synthetic
        spec = separated_means(
            corpus.label_scheme.entity_classes,
            dim=s.dim,
            separation=s.separation,
            seed=s.seed,
            noise_scale=s.noise_scale,
        )
        return synth_embeddings(corpus, spec, seed=s.seed)
    return load_embeddings(cfg.path, corpus)


def build_split(cfg: SplitConfig, corpus: Corpus) -> Split:
    if cfg.files is not None:
        return load_split_files(
            corpus, cfg.files.train, cfg.files.validation, cfg.files.test
        )
    return split_corpus(corpus, cfg.fractions, cfg.seed)


def prepare_inputs(config: ExperimentConfig):
    """Corpus, (possibly PCA-reduced) embeddings, and split per the config."""
    corpus = load_corpus_from_config(config.corpus)
    embeddings = load_embeddings_from_config(config.embeddings, corpus)
    if config.pca is not None:
        pca = fit_pca(
            embeddings,
            n_components=config.pca.n_components,
            variance_target=config.pca.variance_target,
        )
        embeddings = reduce_embeddings(embeddings, pca)
    split = build_split(config.split, corpus)
    return corpus, embeddings, split
