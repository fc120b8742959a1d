"""Entity-level evaluation: micro-averaged exact-match span F1.

A predicted span counts as correct only when class, start, and end all match
a gold span. Predicted tag sequences are BIO2-repaired before extraction so
an ill-formed I-tag starts a new span rather than crashing.
"""

from __future__ import annotations

import numpy as np

from ..corpus import LabelScheme, Sentence, spans_from_tags
from ..embeddings import EmbeddingMatrix
from .model import CrfModel, batch_posteriors


def span_f1(
    gold_spans: list[list], predicted_spans: list[list]
) -> dict[str, float]:
    """Micro P/R/F1 over per-sentence span lists."""
    tp = 0
    n_pred = 0
    n_gold = 0
    for gold, pred in zip(gold_spans, predicted_spans):
        gold_set = set(gold)
        n_gold += len(gold_set)
        n_pred += len(pred)
        tp += sum(1 for span in pred if span in gold_set)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall
        else 0.0
    )
    return {"precision": precision, "recall": recall, "f1": f1}


def predict_tags(
    model: CrfModel,
    sentences: list[Sentence],
    embeddings: EmbeddingMatrix,
    keyed_cache: dict | None = None,
) -> list[np.ndarray]:
    batch = model.featurize(sentences, embeddings, keyed_cache)
    _, paths = batch_posteriors(model, batch)
    return [p.path for p in paths]


def evaluate(
    model: CrfModel,
    sentences: list[Sentence],
    embeddings: EmbeddingMatrix,
    keyed_cache: dict | None = None,
) -> dict[str, float]:
    """Entity-level precision/recall/F1 of the model on the given sentences."""
    scheme: LabelScheme = model.label_scheme
    paths = predict_tags(model, sentences, embeddings, keyed_cache)
    gold_spans = []
    pred_spans = []
    for sent, path in zip(sentences, paths):
        gold_tags = [scheme.tag_name(t) for t in sent.tag_ids]
        pred_tags = [scheme.tag_name(int(t)) for t in path]
        gold_spans.append(spans_from_tags(gold_tags))
        pred_spans.append(spans_from_tags(pred_tags))
    return span_f1(gold_spans, pred_spans)
