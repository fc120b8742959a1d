"""Tokenized corpora with gold BIO tags: loading, validation, splits, statistics.

The sentence is the unit of annotation. Tags are normalized to BIO2 on load
(every entity starts with ``B-``), which makes span extraction deterministic.
A token is *positive* when its gold tag is anything other than ``O``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

OUTSIDE = "O"
_UNIT_SEP = "\x1f"
_RECORD_SEP = "\x1e"


class CorpusFormatError(ValueError):
    """Raised for malformed corpus files or inconsistent tag inventories."""


@dataclass(frozen=True)
class LabelScheme:
    """BIO2 tag inventory derived from an ordered list of entity classes.

    Tag order is fixed as ``O, B-c1, I-c1, B-c2, I-c2, ...`` so tag indices
    are stable for any scheme built from the same class list.
    """

    entity_classes: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.entity_classes)) != len(self.entity_classes):
            raise CorpusFormatError("duplicate entity class names")
        if OUTSIDE in self.entity_classes:
            raise CorpusFormatError("'O' is reserved for the outside tag")

    @property
    def tags(self) -> tuple[str, ...]:
        out = [OUTSIDE]
        for cls in self.entity_classes:
            out.append(f"B-{cls}")
            out.append(f"I-{cls}")
        return tuple(out)

    @property
    def n_tags(self) -> int:
        return 2 * len(self.entity_classes) + 1

    def tag_index(self, tag: str) -> int:
        try:
            return self.tags.index(tag)
        except ValueError:
            raise CorpusFormatError(f"tag {tag!r} not in label scheme") from None

    def tag_name(self, index: int) -> str:
        return self.tags[index]

    @property
    def outside_index(self) -> int:
        return 0


@dataclass(frozen=True)
class Token:
    surface: str
    gold_tag: int
    global_index: int
    pos_tag: str | None = None


@dataclass(frozen=True)
class Sentence:
    id: int
    tokens: tuple[Token, ...]

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    @property
    def tag_ids(self) -> tuple[int, ...]:
        return tuple(t.gold_tag for t in self.tokens)

    @property
    def global_indices(self) -> tuple[int, ...]:
        return tuple(t.global_index for t in self.tokens)


@dataclass(frozen=True)
class EntitySpan:
    """Inclusive token span [start, end] of one entity within a sentence."""

    label: str
    start: int
    end: int

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("span start must not exceed end")


@dataclass(frozen=True)
class Corpus:
    sentences: tuple[Sentence, ...]
    label_scheme: LabelScheme
    has_pos: bool
    manifest_hash: str = field(default="")

    def __post_init__(self):
        if not self.sentences:
            raise CorpusFormatError("corpus contains zero sentences")
        if not self.manifest_hash:
            object.__setattr__(self, "manifest_hash", _manifest_hash(self))

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)

    @property
    def n_tokens(self) -> int:
        return sum(s.n_tokens for s in self.sentences)

    def sentence(self, sentence_id: int) -> Sentence:
        return self.sentences[sentence_id]

    def subset(self, sentence_ids: Iterable[int]) -> list[Sentence]:
        return [self.sentences[i] for i in sentence_ids]

    def sentence_lengths(self) -> np.ndarray:
        return np.array([s.n_tokens for s in self.sentences], dtype=np.int64)


def _manifest_hash(corpus: Corpus) -> str:
    h = hashlib.sha256()
    h.update(",".join(corpus.label_scheme.entity_classes).encode("utf-8"))
    for sent in corpus.sentences:
        for tok in sent.tokens:
            rec = _UNIT_SEP.join(
                (tok.surface, tok.pos_tag or "", str(tok.gold_tag))
            )
            h.update(rec.encode("utf-8"))
            h.update(b"\n")
        h.update(_RECORD_SEP.encode("utf-8"))
    return h.hexdigest()


def normalize_bio2(tags: Sequence[str]) -> list[str]:
    """Repair a raw BIO tag sequence to strict BIO2.

    An ``I-c`` that follows the sentence start, an ``O``, or a tag of a
    different class is rewritten to ``B-c``. Valid BIO2 input is unchanged,
    and IOB1-style files come out as BIO2.
    """
    fixed: list[str] = []
    prev_class: str | None = None
    for tag in tags:
        if tag == OUTSIDE:
            fixed.append(tag)
            prev_class = None
            continue
        if len(tag) < 3 or tag[1] != "-" or tag[0] not in "BI":
            raise CorpusFormatError(f"unrecognized tag string {tag!r}")
        prefix, cls = tag[0], tag[2:]
        if prefix == "I" and cls != prev_class:
            prefix = "B"
        fixed.append(f"{prefix}-{cls}")
        prev_class = cls
    return fixed


@dataclass(frozen=True)
class ColumnLayout:
    """Column positions in a CoNLL-style file. Negative indices allowed."""

    token: int = 0
    tag: int = -1
    pos: int | None = None


def load_conll(
    path: str | Path,
    column_layout: ColumnLayout = ColumnLayout(),
    label_scheme: LabelScheme | None = None,
) -> Corpus:
    """Load a whitespace-column CoNLL file into a normalized corpus.

    Blank lines separate sentences; ``-DOCSTART-`` rows are skipped. When no
    ``label_scheme`` is given, entity classes are collected in order of first
    appearance in the file.
    """
    path = Path(path)
    raw_sentences: list[list[tuple[str, str | None, str]]] = []
    current: list[tuple[str, str | None, str]] = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                if current:
                    raw_sentences.append(current)
                    current = []
                continue
            cols = line.split()
            if cols[column_layout.token] == "-DOCSTART-":
                continue
            surface = cols[column_layout.token]
            tag = cols[column_layout.tag]
            pos = cols[column_layout.pos] if column_layout.pos is not None else None
            current.append((surface, pos, tag))
    if current:
        raw_sentences.append(current)
    if not raw_sentences:
        raise CorpusFormatError(f"no sentences found in {path}")

    normalized = [normalize_bio2([t for _, _, t in rows]) for rows in raw_sentences]
    if label_scheme is None:
        classes: list[str] = []
        for tags in normalized:
            for tag in tags:
                if tag != OUTSIDE and tag[2:] not in classes:
                    classes.append(tag[2:])
        label_scheme = LabelScheme(tuple(classes))

    sentences = []
    gidx = 0
    for sid, (rows, tags) in enumerate(zip(raw_sentences, normalized)):
        tokens = []
        for (surface, pos, _), tag in zip(rows, tags):
            tokens.append(
                Token(
                    surface=surface,
                    pos_tag=pos,
                    gold_tag=label_scheme.tag_index(tag),
                    global_index=gidx,
                )
            )
            gidx += 1
        sentences.append(Sentence(id=sid, tokens=tuple(tokens)))

    has_pos = column_layout.pos is not None
    return Corpus(tuple(sentences), label_scheme, has_pos)


def serialize_conll(corpus: Corpus, path: str | Path) -> None:
    """Write the corpus back out in CoNLL columns (token [pos] tag)."""
    path = Path(path)
    scheme = corpus.label_scheme
    with path.open("w", encoding="utf-8") as fh:
        for sent in corpus.sentences:
            for tok in sent.tokens:
                cols = [tok.surface]
                if corpus.has_pos:
                    cols.append(tok.pos_tag or "-")
                cols.append(scheme.tag_name(tok.gold_tag))
                fh.write(" ".join(cols) + "\n")
            fh.write("\n")


def build_corpus(
    sentences_tokens: Sequence[Sequence[tuple[str, str]]],
    label_scheme: LabelScheme | None = None,
    pos_tags: Sequence[Sequence[str]] | None = None,
) -> Corpus:
    """Construct a corpus from in-memory (surface, tag-string) rows."""
    normalized = [
        normalize_bio2([tag for _, tag in sent]) for sent in sentences_tokens
    ]
    if label_scheme is None:
        classes: list[str] = []
        for tags in normalized:
            for tag in tags:
                if tag != OUTSIDE and tag[2:] not in classes:
                    classes.append(tag[2:])
        label_scheme = LabelScheme(tuple(classes))
    sentences = []
    gidx = 0
    for sid, (sent, tags) in enumerate(zip(sentences_tokens, normalized)):
        tokens = []
        for i, ((surface, _), tag) in enumerate(zip(sent, tags)):
            pos = pos_tags[sid][i] if pos_tags is not None else None
            tokens.append(Token(surface, label_scheme.tag_index(tag), gidx, pos))
            gidx += 1
        sentences.append(Sentence(id=sid, tokens=tuple(tokens)))
    return Corpus(tuple(sentences), label_scheme, has_pos=pos_tags is not None)


@dataclass(frozen=True)
class Split:
    """Disjoint, exhaustive sentence-id partition of one corpus."""

    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]

    def __post_init__(self):
        parts = [set(self.train), set(self.validation), set(self.test)]
        total = sum(len(p) for p in parts)
        if len(parts[0] | parts[1] | parts[2]) != total:
            raise ValueError("split parts overlap")


def split_corpus(corpus: Corpus, fractions: tuple[float, float, float], seed: int) -> Split:
    """Random train/validation/test partition with the given fractions.

    Fractions must sum to 1 within 1e-9 and all be positive. The partition is
    a deterministic function of (corpus size, fractions, seed).
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)}, expected 1.0")
    if any(f <= 0 for f in fractions):
        raise ValueError("all fractions must be positive")
    n = corpus.n_sentences
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    train = tuple(sorted(int(i) for i in order[:n_train]))
    val = tuple(sorted(int(i) for i in order[n_train : n_train + n_val]))
    test = tuple(sorted(int(i) for i in order[n_train + n_val :]))
    return Split(train, val, test)


def load_split_files(
    corpus: Corpus,
    train_path: str | Path,
    validation_path: str | Path,
    test_path: str | Path,
) -> Split:
    """Read predefined splits: one sentence id per line, newline separated.

    Predefined files take precedence over fraction-based splitting whenever
    they are available.
    """

    def read_ids(p):
        ids = []
        for line in Path(p).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line:
                ids.append(int(line))
        return tuple(ids)

    split = Split(read_ids(train_path), read_ids(validation_path), read_ids(test_path))
    all_ids = set(split.train) | set(split.validation) | set(split.test)
    if all_ids != set(range(corpus.n_sentences)):
        raise ValueError("split files do not cover the corpus exactly")
    return split


def extract_spans(sentence: Sentence, scheme: LabelScheme) -> list[EntitySpan]:
    """Maximal entity spans of a BIO2 tag sequence.

    ``B-c`` starts a span; contiguous ``I-c`` of the same class extends it.
    """
    return spans_from_tags([scheme.tag_name(t) for t in sentence.tag_ids])


def spans_from_tags(tags: Sequence[str]) -> list[EntitySpan]:
    spans: list[EntitySpan] = []
    start = None
    cls = None
    for i, tag in enumerate(normalize_bio2(tags)):
        if tag == OUTSIDE:
            if start is not None:
                spans.append(EntitySpan(cls, start, i - 1))
                start, cls = None, None
        elif tag.startswith("B-"):
            if start is not None:
                spans.append(EntitySpan(cls, start, i - 1))
            start, cls = i, tag[2:]
        else:  # I- of the same class, guaranteed by normalization
            pass
    if start is not None:
        spans.append(EntitySpan(cls, start, len(tags) - 1))
    return spans


def spans_to_tags(spans: Sequence[EntitySpan], n_tokens: int) -> list[str]:
    """Re-encode spans as BIO2 tag strings (inverse of span extraction)."""
    tags = [OUTSIDE] * n_tokens
    for span in spans:
        tags[span.start] = f"B-{span.label}"
        for i in range(span.start + 1, span.end + 1):
            tags[i] = f"I-{span.label}"
    return tags


def is_positive(token: Token) -> bool:
    return token.gold_tag != 0


def corpus_stats(corpus: Corpus) -> dict:
    """Exact corpus statistics, with positive = any non-O gold tag."""
    n_sent = corpus.n_sentences
    n_tok = corpus.n_tokens
    n_pos = sum(1 for s in corpus.sentences for t in s.tokens if t.gold_tag != 0)
    return {
        "n_sentences": n_sent,
        "n_tokens": n_tok,
        "mean_tokens_per_sentence": n_tok / n_sent,
        "mean_positive_per_sentence": n_pos / n_sent,
        "positive_fraction": n_pos / n_tok,
    }


def gold_positive_mask(corpus: Corpus) -> np.ndarray:
    """Boolean mask over global token indices: True where gold tag is non-O."""
    mask = np.zeros(corpus.n_tokens, dtype=bool)
    for sent in corpus.sentences:
        for tok in sent.tokens:
            mask[tok.global_index] = tok.gold_tag != 0
    return mask


def save_corpus_json(corpus: Corpus, path: str | Path) -> None:
    """Normalized-corpus snapshot used by session persistence and `ingest`."""
    payload = {
        "entity_classes": list(corpus.label_scheme.entity_classes),
        "has_pos": corpus.has_pos,
        "manifest_hash": corpus.manifest_hash,
        "sentences": [
            {
                "id": s.id,
                "tokens": [
                    [t.surface, t.pos_tag, t.gold_tag] for t in s.tokens
                ],
            }
            for s in corpus.sentences
        ],
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_corpus_json(path: str | Path) -> Corpus:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    scheme = LabelScheme(tuple(payload["entity_classes"]))
    sentences = []
    gidx = 0
    for s in payload["sentences"]:
        tokens = []
        for surface, pos, tag in s["tokens"]:
            tokens.append(Token(surface, tag, gidx, pos))
            gidx += 1
        sentences.append(Sentence(id=s["id"], tokens=tuple(tokens)))
    corpus = Corpus(tuple(sentences), scheme, payload["has_pos"])
    if corpus.manifest_hash != payload["manifest_hash"]:
        raise CorpusFormatError("corpus snapshot hash mismatch")
    return corpus
