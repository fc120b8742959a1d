"""Synthetic corpora for desk-scale experiments and tests.

Sentences come from three archetypes so querying strategies can actually
differ: *typical* sentences of moderate length carrying one or two
multi-token entity spans, short *fragments* with at most a single-token
entity, and long all-negative *filler*. Mixture weights, lengths, and span
geometry are all configurable; generation is deterministic in the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, LabelScheme, build_corpus


@dataclass(frozen=True)
class SynthCorpusSpec:
    n_sentences: int = 500
    entity_classes: tuple[str, ...] = ("X", "Y")
    typical_length: tuple[int, int] = (6, 14)  # inclusive bounds
    spans_per_typical: tuple[int, int] = (1, 2)
    span_length_probs: tuple[float, ...] = (0.5, 0.35, 0.15)  # span length 1, 2, 3
    fragment_fraction: float = 0.0
    fragment_length: tuple[int, int] = (2, 4)
    fragment_entity_prob: float = 0.6  # chance a fragment carries a 1-token span
    filler_fraction: float = 0.0
    filler_length: tuple[int, int] = (16, 28)
    vocab_size: int = 800
    # Junk tokens: gold-O surfaces prefixed "j", meant to be drawn from a
    # broad embedding distribution (codes, tables, boilerplate). Rates are
    # per-token probabilities within each sentence archetype.
    junk_rate_typical: float = 0.0
    junk_rate_fragment: float = 0.0
    junk_rate_filler: float = 0.0


def make_synthetic_corpus(spec: SynthCorpusSpec, seed: int) -> Corpus:
    rng = np.random.default_rng(seed)
    classes = spec.entity_classes
    span_lengths = np.arange(1, len(spec.span_length_probs) + 1)

    def word(kind: str) -> str:
        return f"{kind}{rng.integers(spec.vocab_size)}"

    sentences = []
    for _ in range(spec.n_sentences):
        draw = rng.random()
        if draw < spec.fragment_fraction:
            n = int(rng.integers(spec.fragment_length[0], spec.fragment_length[1] + 1))
            tags = ["O"] * n
            if rng.random() < spec.fragment_entity_prob:
                pos = int(rng.integers(n))
                tags[pos] = f"B-{classes[rng.integers(len(classes))]}"
            junk_rate = spec.junk_rate_fragment
        elif draw < spec.fragment_fraction + spec.filler_fraction:
            n = int(rng.integers(spec.filler_length[0], spec.filler_length[1] + 1))
            tags = ["O"] * n
            junk_rate = spec.junk_rate_filler
        else:
            n = int(rng.integers(spec.typical_length[0], spec.typical_length[1] + 1))
            tags = ["O"] * n
            n_spans = int(
                rng.integers(spec.spans_per_typical[0], spec.spans_per_typical[1] + 1)
            )
            for _ in range(n_spans):
                length = int(rng.choice(span_lengths, p=spec.span_length_probs))
                length = min(length, n)
                start = int(rng.integers(0, n - length + 1))
                if any(t != "O" for t in tags[start : start + length]):
                    continue  # skip overlapping placements rather than retry
                cls = classes[rng.integers(len(classes))]
                tags[start] = f"B-{cls}"
                for k in range(start + 1, start + length):
                    tags[k] = f"I-{cls}"
            junk_rate = spec.junk_rate_typical
        tokens = []
        for t in tags:
            if t != "O":
                tokens.append((word("e"), t))
            elif junk_rate > 0.0 and rng.random() < junk_rate:
                tokens.append((word("j"), t))
            else:
                tokens.append((word("w"), t))
        sentences.append(tokens)
    return build_corpus(sentences, label_scheme=LabelScheme(spec.entity_classes))
