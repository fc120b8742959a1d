"""Per-token embedding extraction from a transformer encoder.

Three layer-combination strategies over the encoder's hidden states:

* LL: the last layer directly (width = hidden size)
* SL4: the sum of the last four layers (width = hidden size)
* CL4: the concatenation of the last four layers (width = 4x hidden size)

Words are split into subwords by the model tokenizer; subword vectors are
pooled back to word level (arithmetic mean by default, first-subword as an
alternative) so the output has exactly one row per corpus token. Sequences
longer than the encoder context are windowed with overlap; each word takes
its vector from the window where it sits most interior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from alseq.corpus import Corpus
from alseq.embeddings import EmbeddingMatrix

logger = logging.getLogger(__name__)

STRATEGIES = ("LL", "SL4", "CL4")


class AlignmentError(RuntimeError):
    """A word could not be aligned to any subword vector."""


@dataclass(frozen=True)
class ExtractionSpec:
    model_id: str  # HF hub id or local path
    strategy: str = "CL4"
    batch_size: int = 16
    device: str = "cpu"
    pooling: str = "mean"  # or "first" for first-subword

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.pooling not in ("mean", "first"):
            raise ValueError("pooling must be 'mean' or 'first'")


def _combine_layers(hidden_states: tuple[torch.Tensor, ...], strategy: str) -> torch.Tensor:
    if strategy == "LL":
        return hidden_states[-1]
    last4 = hidden_states[-4:]
    if strategy == "SL4":
        return last4[0] + last4[1] + last4[2] + last4[3]
    return torch.cat(last4, dim=-1)  # CL4


def _window_spans(n_subwords: list[int], capacity: int, overlap_words: int = 16):
    """Word-index windows whose subword totals fit the encoder capacity."""
    spans = []
    start = 0
    n = len(n_subwords)
    while start < n:
        end = start
        total = 0
        while end < n and total + n_subwords[end] <= capacity:
            total += n_subwords[end]
            end += 1
        if end == start:  # single word longer than capacity
            raise AlignmentError(
                f"word at position {start} exceeds the encoder context on its own"
            )
        spans.append((start, end))
        if end >= n:
            break
        start = max(start + 1, end - overlap_words)
    return spans


def _owner_window(spans, word_idx: int) -> int:
    """Index of the window where the word is farthest from a boundary."""
    best, best_margin = -1, -1
    for w, (start, end) in enumerate(spans):
        if start <= word_idx < end:
            margin = min(word_idx - start, end - 1 - word_idx)
            if margin > best_margin:
                best, best_margin = w, margin
    return best


def extract(corpus: Corpus, spec: ExtractionSpec) -> EmbeddingMatrix:
    """One vector per corpus token, in global-index order."""
    tokenizer = AutoTokenizer.from_pretrained(spec.model_id)
    model = AutoModel.from_pretrained(spec.model_id)
    model.eval()
    device = torch.device(spec.device)
    model.to(device)

    hidden = model.config.hidden_size
    dim = 4 * hidden if spec.strategy == "CL4" else hidden
    capacity = min(
        getattr(model.config, "max_position_embeddings", 512), tokenizer.model_max_length
    ) - 2  # room for the special tokens

    rows = np.empty((corpus.n_tokens, dim), dtype=np.float32)
    pending: list[tuple[int, list[str]]] = []  # (sentence id, words)

    def flush(batch: list[tuple[int, list[str]]]):
        words_batch = [words for _, words in batch]
        encoded = tokenizer(
            words_batch,
            is_split_into_words=True,
            padding=True,
            return_tensors="pt",
        )
        encoded = {k: v.to(device) for k, v in encoded.items()}
        with torch.no_grad():
            output = model(**encoded, output_hidden_states=True)
        vectors = _combine_layers(output.hidden_states, spec.strategy).cpu()

        for row, (sid, words) in enumerate(batch):
            word_ids = tokenizer(
                words, is_split_into_words=True
            ).word_ids()
            by_word: dict[int, list[int]] = {}
            for pos, wid in enumerate(word_ids):
                if wid is not None:
                    by_word.setdefault(wid, []).append(pos)
            sent = corpus.sentences[sid]
            for w, tok in enumerate(sent.tokens):
                positions = by_word.get(w)
                if not positions:
                    raise AlignmentError(
                        f"sentence {sid}: token {w} ({tok.surface!r}) aligned to no subwords"
                    )
                if spec.pooling == "first":
                    vec = vectors[row, positions[0]]
                else:
                    vec = vectors[row, positions].mean(dim=0)
                rows[tok.global_index] = vec.numpy().astype(np.float32)

    def extract_windowed(sid: int, words: list[str]):
        subword_counts = [
            len(tokenizer(word, add_special_tokens=False)["input_ids"]) for word in words
        ]
        spans = _window_spans(subword_counts, capacity)
        logger.warning(
            "sentence %d exceeds the encoder context (%d subwords); windowing into %d spans",
            sid, sum(subword_counts), len(spans),
        )
        sent = corpus.sentences[sid]
        window_vectors = []
        for start, end in spans:
            encoded = tokenizer(
                words[start:end], is_split_into_words=True, return_tensors="pt"
            )
            encoded = {k: v.to(device) for k, v in encoded.items()}
            with torch.no_grad():
                output = model(**encoded, output_hidden_states=True)
            window_vectors.append(
                _combine_layers(output.hidden_states, spec.strategy)[0].cpu()
            )
        for w, tok in enumerate(sent.tokens):
            widx = _owner_window(spans, w)
            start, _ = spans[widx]
            word_ids = tokenizer(
                words[spans[widx][0] : spans[widx][1]], is_split_into_words=True
            ).word_ids()
            positions = [p for p, wid in enumerate(word_ids) if wid == w - start]
            if not positions:
                raise AlignmentError(
                    f"sentence {sid}: token {w} ({tok.surface!r}) aligned to no subwords"
                )
            vecs = window_vectors[widx]
            if spec.pooling == "first":
                vec = vecs[positions[0]]
            else:
                vec = vecs[positions].mean(dim=0)
            rows[tok.global_index] = vec.numpy().astype(np.float32)

    for sent in corpus.sentences:
        words = [t.surface for t in sent.tokens]
        n_subwords = sum(
            len(tokenizer(w, add_special_tokens=False)["input_ids"]) for w in words
        )
        if n_subwords > capacity:
            extract_windowed(sent.id, words)
            continue
        pending.append((sent.id, words))
        if len(pending) >= spec.batch_size:
            flush(pending)
            pending = []
    if pending:
        flush(pending)

    return EmbeddingMatrix(rows, corpus.manifest_hash)
