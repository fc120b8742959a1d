"""Per-token embedding matrices: EMBF file I/O, PCA reduction, synthesis.

EMBF is a little-endian binary layout, bit-exact across round trips:

    magic "EMBF" (4 bytes) | version u32 = 1 | corpus_hash 32 bytes |
    token_count u64 | dim u32 | token_count x dim float32, row-major

The 32 hash bytes are the raw sha256 digest of the corpus manifest hash, so
a file can only be loaded against the corpus it was built from. A sidecar
text manifest (``<file>.manifest.txt``) records the source model id and the
extraction strategy.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus

EMBF_MAGIC = b"EMBF"
EMBF_VERSION = 1


class EmbeddingFormatError(ValueError):
    """Raised for malformed EMBF files or corpus/file mismatches."""


@dataclass(frozen=True)
class EmbeddingMatrix:
    """One fixed-width float32 vector per corpus token, by global index."""

    rows: np.ndarray  # (n_tokens, dim) float32
    corpus_hash: str

    def __post_init__(self):
        if self.rows.ndim != 2:
            raise EmbeddingFormatError("embedding rows must be 2-D")
        if not np.isfinite(self.rows).all():
            raise EmbeddingFormatError("embedding matrix contains non-finite values")

    @property
    def n_tokens(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def take(self, global_indices) -> np.ndarray:
        return self.rows[np.asarray(global_indices, dtype=np.int64)]


def write_embf(matrix: EmbeddingMatrix, path: str | Path) -> None:
    path = Path(path)
    rows = np.ascontiguousarray(matrix.rows, dtype="<f4")
    with path.open("wb") as fh:
        fh.write(EMBF_MAGIC)
        fh.write(struct.pack("<I", EMBF_VERSION))
        fh.write(bytes.fromhex(matrix.corpus_hash))
        fh.write(struct.pack("<Q", rows.shape[0]))
        fh.write(struct.pack("<I", rows.shape[1]))
        fh.write(rows.tobytes(order="C"))


def write_manifest(path: str | Path, model_id: str, strategy: str) -> None:
    manifest = Path(str(path) + ".manifest.txt")
    manifest.write_text(f"model_id: {model_id}\nstrategy: {strategy}\n", encoding="utf-8")


def read_embf(path: str | Path) -> EmbeddingMatrix:
    """Read an EMBF file without checking it against any corpus."""
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(4)
        if magic != EMBF_MAGIC:
            raise EmbeddingFormatError(f"bad magic {magic!r} in {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != EMBF_VERSION:
            raise EmbeddingFormatError(f"unsupported EMBF version {version}")
        corpus_hash = fh.read(32).hex()
        (n_tokens,) = struct.unpack("<Q", fh.read(8))
        (dim,) = struct.unpack("<I", fh.read(4))
        data = np.fromfile(fh, dtype="<f4", count=n_tokens * dim)
    if data.size != n_tokens * dim:
        raise EmbeddingFormatError("EMBF payload truncated")
    return EmbeddingMatrix(data.reshape(n_tokens, dim), corpus_hash)


def load_embeddings(path: str | Path, corpus: Corpus) -> EmbeddingMatrix:
    """Load an EMBF file and validate it against the corpus it claims."""
    matrix = read_embf(path)
    if matrix.corpus_hash != corpus.manifest_hash:
        raise EmbeddingFormatError(
            "EMBF corpus hash does not match the supplied corpus "
            f"({matrix.corpus_hash[:12]}... vs {corpus.manifest_hash[:12]}...)"
        )
    if matrix.n_tokens != corpus.n_tokens:
        raise EmbeddingFormatError(
            f"EMBF row count {matrix.n_tokens} != corpus token count {corpus.n_tokens}"
        )
    return matrix


@dataclass(frozen=True)
class PcaModel:
    """Mean-centered PCA: orthonormal components sorted by explained variance."""

    mean: np.ndarray  # (dim,)
    components: np.ndarray  # (k, dim)
    explained_variance_ratio: np.ndarray  # (k,)

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def input_dim(self) -> int:
        return self.components.shape[1]


def _sign_fix(components: np.ndarray) -> np.ndarray:
    # Largest-magnitude entry of each component made positive, for determinism.
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(components.shape[0]), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def fit_pca(
    matrix: EmbeddingMatrix | np.ndarray,
    n_components: int | None = None,
    variance_target: float | None = None,
) -> PcaModel:
    """Fit PCA on the full matrix via eigendecomposition of the covariance.

    Exactly one of ``n_components`` and ``variance_target`` must be given.
    With a variance target, k is the smallest component count whose
    cumulative explained-variance ratio reaches the target.
    """
    X = matrix.rows if isinstance(matrix, EmbeddingMatrix) else matrix
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if (n_components is None) == (variance_target is None):
        raise ValueError("specify exactly one of n_components / variance_target")
    if n_components is not None and not (1 <= n_components <= d):
        raise ValueError(f"n_components must be in [1, {d}]")
    if n <= (n_components or 1):
        raise ValueError("need more rows than requested components")

    mean = X.mean(axis=0)
    Xc = X - mean
    if n >= d:
        cov = (Xc.T @ Xc) / (n - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1]
        eigvals = np.clip(eigvals[order], 0.0, None)
        components = eigvecs[:, order].T
    else:
        # Fewer rows than columns: thin SVD is cheaper and better conditioned.
        _, svals, vt = np.linalg.svd(Xc, full_matrices=False)
        eigvals = svals**2 / (n - 1)
        components = vt

    total = eigvals.sum()
    if total <= 0:
        if variance_target is not None:
            raise ValueError("degenerate matrix: zero variance, no target reachable")
        ratio = np.zeros(d)
    else:
        ratio = eigvals / total

    if variance_target is not None:
        cumulative = np.cumsum(ratio)
        k = int(np.searchsorted(cumulative, variance_target - 1e-12) + 1)
        k = min(k, len(ratio))
    else:
        k = n_components

    return PcaModel(
        mean=mean,
        components=_sign_fix(components[:k].copy()),
        explained_variance_ratio=ratio[:k].copy(),
    )


def pca_transform(pca: PcaModel, matrix: EmbeddingMatrix | np.ndarray) -> np.ndarray:
    X = matrix.rows if isinstance(matrix, EmbeddingMatrix) else matrix
    if X.shape[1] != pca.input_dim:
        raise ValueError(f"matrix dim {X.shape[1]} != PCA input dim {pca.input_dim}")
    return (np.asarray(X, dtype=np.float64) - pca.mean) @ pca.components.T


def reduce_embeddings(matrix: EmbeddingMatrix, pca: PcaModel) -> EmbeddingMatrix:
    return EmbeddingMatrix(pca_transform(pca, matrix), matrix.corpus_hash)


@dataclass(frozen=True)
class SynthSpec:
    """Per-class Gaussian generator: class name -> mean vector plus noise.

    Means must include the outside class ``"O"``; all mean vectors share one
    dimension. Every token is drawn around the mean of its gold class with
    ``noise_scale``, overridable per class via ``class_noise`` (a fat outside
    class makes negatives overlap the entity classes).

    ``surface_class_prefixes`` optionally reroutes tokens whose surface starts
    with a given prefix to a different generator class, the way a real encoder
    keys on the word itself: e.g. junk surfaces can draw from a broad
    distribution even though their gold tag is O.
    """

    class_means: dict[str, np.ndarray]
    noise_scale: float = 1.0
    class_noise: dict[str, float] | None = None
    surface_class_prefixes: dict[str, str] | None = None

    def __post_init__(self):
        dims = {np.asarray(v).shape for v in self.class_means.values()}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ValueError("class means must be 1-D vectors of one shared dim")
        if "O" not in self.class_means:
            raise ValueError("synthesis spec must include an 'O' class mean")

    def noise_for(self, cls: str) -> float:
        if self.class_noise and cls in self.class_noise:
            return self.class_noise[cls]
        return self.noise_scale

    @property
    def dim(self) -> int:
        return len(next(iter(self.class_means.values())))


def separated_means(
    entity_classes: tuple[str, ...],
    dim: int,
    separation: float,
    seed: int,
    noise_scale: float = 1.0,
    class_noise: dict[str, float] | None = None,
) -> SynthSpec:
    """Random unit directions scaled so all class means are ~`separation` apart."""
    rng = np.random.default_rng(seed)
    names = ("O",) + tuple(entity_classes)
    dirs = rng.normal(size=(len(names), dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # Random unit vectors in moderate dim are near-orthogonal, giving pairwise
    # distances ~ separation * sqrt(2); scale conservatively by separation.
    means = {name: dirs[i] * separation for i, name in enumerate(names)}
    return SynthSpec(class_means=means, noise_scale=noise_scale, class_noise=class_noise)


def synth_embeddings(corpus: Corpus, spec: SynthSpec, seed: int) -> EmbeddingMatrix:
    """Deterministic synthetic embeddings: token ~ N(mean of its class, noise^2 I)."""
    scheme = corpus.label_scheme
    rng = np.random.default_rng(seed)
    rows = np.empty((corpus.n_tokens, spec.dim), dtype=np.float64)
    noise = rng.normal(size=rows.shape)
    prefixes = spec.surface_class_prefixes or {}
    for sent in corpus.sentences:
        for tok in sent.tokens:
            tag = scheme.tag_name(tok.gold_tag)
            cls = "O" if tag == "O" else tag[2:]
            for prefix, mapped in prefixes.items():
                if tok.surface.startswith(prefix):
                    cls = mapped
                    break
            if cls not in spec.class_means:
                raise ValueError(f"no mean vector for class {cls!r}")
            rows[tok.global_index] = spec.class_means[cls]
            noise[tok.global_index] *= spec.noise_for(cls)
    rows += noise
    return EmbeddingMatrix(rows.astype(np.float32), corpus.manifest_hash)
