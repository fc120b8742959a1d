"""Token featurization: embedding components plus lexical cues.

Every position gets one value per feature slot for each of the previous,
current, and next token: the embedding vector (real-valued), the POS tag
when the corpus carries one, the lowercased surface, the last-3 and last-2
suffixes, and three 0/1 checks (is-title, is-digit, is-lower). That is
(N+7)*3 values per position with POS and (N+6)*3 without. Neighbors beyond
the sentence boundary contribute BOS/EOS sentinel values so the count never
changes.

Feature ids live in a registry built from the currently labeled sentences;
categorical features never seen at training time map to no-ops at
prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..corpus import Sentence
from ..embeddings import EmbeddingMatrix

BOS = "<bos>"
EOS = "<eos>"

FeatureKey = tuple
Valued = tuple[FeatureKey, float]

_OFFSETS = (-1, 0, 1)
_BOOL_KINDS = ("istitle", "isdigit", "islower")
_CATEGORICAL_KINDS = ("pos", "low", "suf3", "suf2")


def _lexical(surface: str) -> tuple[str, str, str, float, float, float]:
    low = surface.lower()
    return (
        low,
        low[-3:],
        low[-2:],
        1.0 if surface.istitle() else 0.0,
        1.0 if surface.isdigit() else 0.0,
        1.0 if surface.islower() else 0.0,
    )


def keyed_features(
    sentence: Sentence, embeddings: EmbeddingMatrix, has_pos: bool
) -> list[list[Valued]]:
    """(key, value) pairs per position; keys are hashable tuples."""
    n = sentence.n_tokens
    dim = embeddings.dim
    vectors = embeddings.take(sentence.global_indices)
    lexical = [_lexical(tok.surface) for tok in sentence.tokens]
    out: list[list[Valued]] = []
    for i in range(n):
        feats: list[Valued] = []
        for off in _OFFSETS:
            j = i + off
            if 0 <= j < n:
                vec = vectors[j]
                for d in range(dim):
                    feats.append((("emb", off, d), float(vec[d])))
                if has_pos:
                    feats.append((("pos", off, sentence.tokens[j].pos_tag or "-"), 1.0))
                low, suf3, suf2, title, digit, lower = lexical[j]
                feats.append((("low", off, low), 1.0))
                feats.append((("suf3", off, suf3), 1.0))
                feats.append((("suf2", off, suf2), 1.0))
                feats.append((("istitle", off), title))
                feats.append((("isdigit", off), digit))
                feats.append((("islower", off), lower))
            else:
                sentinel = BOS if j < 0 else EOS
                for d in range(dim):
                    feats.append((("emb", off, d), 0.0))
                if has_pos:
                    feats.append((("pos", off, sentinel), 1.0))
                feats.append((("low", off, sentinel), 1.0))
                feats.append((("suf3", off, sentinel), 1.0))
                feats.append((("suf2", off, sentinel), 1.0))
                feats.append((("istitle", off), 0.0))
                feats.append((("isdigit", off), 0.0))
                feats.append((("islower", off), 0.0))
        out.append(feats)
    return out


# Public alias matching the operation-level name.
featurize = keyed_features


class FeatureRegistry:
    """Session-global mapping from feature keys to contiguous ids."""

    def __init__(self, embedding_dim: int, has_pos: bool):
        self.embedding_dim = embedding_dim
        self.has_pos = has_pos
        self._index: dict[FeatureKey, int] = {}
        for off in _OFFSETS:
            for d in range(embedding_dim):
                self._register(("emb", off, d))
            for kind in _BOOL_KINDS:
                self._register((kind, off))
            for sentinel in (BOS, EOS):
                if has_pos:
                    self._register(("pos", off, sentinel))
                self._register(("low", off, sentinel))
                self._register(("suf3", off, sentinel))
                self._register(("suf2", off, sentinel))

    def _register(self, key: FeatureKey) -> int:
        idx = self._index.get(key)
        if idx is None:
            idx = len(self._index)
            self._index[key] = idx
        return idx

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, key: FeatureKey) -> bool:
        return key in self._index

    def id_of(self, key: FeatureKey) -> int | None:
        return self._index.get(key)

    @classmethod
    def build(
        cls,
        sentences: list[Sentence],
        embeddings: EmbeddingMatrix,
        has_pos: bool,
    ) -> "FeatureRegistry":
        reg = cls(embeddings.dim, has_pos)
        for sent in sentences:
            for tok in sent.tokens:
                low, suf3, suf2, _, _, _ = _lexical(tok.surface)
                for off in _OFFSETS:
                    if has_pos:
                        reg._register(("pos", off, tok.pos_tag or "-"))
                    reg._register(("low", off, low))
                    reg._register(("suf3", off, suf3))
                    reg._register(("suf2", off, suf2))
        return reg

    def keys(self) -> list[FeatureKey]:
        # dict preserves insertion order == id order
        return list(self._index.keys())

    @classmethod
    def from_keys(
        cls, keys: list[FeatureKey], embedding_dim: int, has_pos: bool
    ) -> "FeatureRegistry":
        reg = cls.__new__(cls)
        reg.embedding_dim = embedding_dim
        reg.has_pos = has_pos
        reg._index = {tuple(k): i for i, k in enumerate(keys)}
        return reg


@dataclass
class FeaturizedBatch:
    """CSR feature matrix over the concatenated positions of many sentences."""

    X: sp.csr_matrix  # (total_positions, n_features)
    lengths: np.ndarray  # (n_sentences,)
    offsets: np.ndarray  # (n_sentences + 1,) position offsets into X rows

    @property
    def n_sentences(self) -> int:
        return len(self.lengths)

    @property
    def n_positions(self) -> int:
        return int(self.offsets[-1])

    def rows_of(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))


def featurize_batch(
    sentences: list[Sentence],
    embeddings: EmbeddingMatrix,
    registry: FeatureRegistry,
    has_pos: bool,
    keyed_cache: dict[int, list[list[Valued]]] | None = None,
) -> FeaturizedBatch:
    """Map sentences to a CSR matrix of registered features.

    ``keyed_cache`` (sentence id -> keyed features) avoids recomputing the
    string work across query iterations; id mapping is redone per registry.
    """
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    lengths = []
    lookup = registry.id_of
    for sent in sentences:
        if keyed_cache is not None and sent.id in keyed_cache:
            keyed = keyed_cache[sent.id]
        else:
            keyed = keyed_features(sent, embeddings, has_pos)
            if keyed_cache is not None:
                keyed_cache[sent.id] = keyed
        lengths.append(sent.n_tokens)
        for feats in keyed:
            for key, value in feats:
                fid = lookup(key)
                if fid is not None and value != 0.0:
                    indices.append(fid)
                    data.append(value)
            indptr.append(len(indices))
    X = sp.csr_matrix(
        (
            np.asarray(data, dtype=np.float64),
            np.asarray(indices, dtype=np.int64),
            np.asarray(indptr, dtype=np.int64),
        ),
        shape=(len(indptr) - 1, len(registry)),
    )
    lengths_arr = np.asarray(lengths, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths_arr)])
    return FeaturizedBatch(X=X, lengths=lengths_arr, offsets=offsets)
