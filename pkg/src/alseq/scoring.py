"""Sentence query scores: token uncertainties, aggregation, baselines.

Token uncertainty tau comes in four flavors computed from the per-position
tag posteriors (natural log for entropy; the base only rescales and never
changes a ranking):

* TE: entropy of the tag distribution, in [0, ln M]
* TP: one minus the top tag probability, in [0, 1 - 1/M]
* AP: one minus the probability of the tag the best path assigned, in [0, 1]
* TM: one minus the margin between the top two tags, in [0, 1]

Aggregations: the max (single), the length-normalized sum (normalized), the
plain sum (total), the sum over predicted-positive tokens (total_pos), and
the positive sum weighted by sqrt of the token-count density (dnorm_pos).
Baselines: uniform random, longest sentence, and the density-weighted count
of predicted-positive tokens.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Sentence
from .crf.model import MarginalTable, ViterbiResult


class UncertaintyMeasure(str, enum.Enum):
    TE = "TE"
    TP = "TP"
    AP = "AP"
    TM = "TM"


class AggregationStrategy(str, enum.Enum):
    SINGLE = "single"
    NORMALIZED = "normalized"
    TOTAL = "total"
    TOTAL_POS = "total_pos"
    DNORM_POS = "dnorm_pos"
    RANDOM = "random"
    LSS = "lss"
    PAS = "pas"


UNCERTAINTY_STRATEGIES = (
    AggregationStrategy.SINGLE,
    AggregationStrategy.NORMALIZED,
    AggregationStrategy.TOTAL,
    AggregationStrategy.TOTAL_POS,
    AggregationStrategy.DNORM_POS,
)

NEEDS_POSITIVE_SET = (
    AggregationStrategy.TOTAL_POS,
    AggregationStrategy.DNORM_POS,
    AggregationStrategy.PAS,
)

NEEDS_DENSITY = (AggregationStrategy.DNORM_POS, AggregationStrategy.PAS)

STRATEGY_ABBREV = {
    AggregationStrategy.SINGLE: "s",
    AggregationStrategy.NORMALIZED: "n",
    AggregationStrategy.TOTAL: "t",
    AggregationStrategy.TOTAL_POS: "tp",
    AggregationStrategy.DNORM_POS: "dp",
}


def strategy_label(strategy: AggregationStrategy, measure: UncertaintyMeasure) -> str:
    """Short display name, e.g. tpTE for the positive-sum entropy score."""
    if strategy == AggregationStrategy.RANDOM:
        return "RS"
    if strategy == AggregationStrategy.LSS:
        return "LSS"
    if strategy == AggregationStrategy.PAS:
        return "PAS"
    return STRATEGY_ABBREV[strategy] + measure.value


class ScoringError(ValueError):
    pass


def _check_distribution(p: np.ndarray) -> None:
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(p < -1e-12):
        raise ScoringError("marginal distribution is not normalized")


def token_uncertainties(
    measure: UncertaintyMeasure,
    marginals: MarginalTable,
    viterbi: ViterbiResult | None = None,
) -> np.ndarray:
    """tau for every position of one sentence."""
    p = marginals.unary
    _check_distribution(p)
    if measure == UncertaintyMeasure.TE:
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0.0, p * np.log(p), 0.0)
        return -terms.sum(axis=1)
    if measure == UncertaintyMeasure.TP:
        return 1.0 - p.max(axis=1)
    if measure == UncertaintyMeasure.AP:
        if viterbi is None:
            raise ScoringError("assignment-probability measure needs a Viterbi result")
        return 1.0 - viterbi.assigned_marginals
    if measure == UncertaintyMeasure.TM:
        if p.shape[1] < 2:
            return np.zeros(p.shape[0])
        top2 = np.partition(p, p.shape[1] - 2, axis=1)[:, -2:]
        return 1.0 - (top2[:, 1] - top2[:, 0])
    raise ScoringError(f"unknown measure {measure}")


def token_uncertainty(
    measure: UncertaintyMeasure,
    marginals: MarginalTable,
    viterbi: ViterbiResult | None,
    position: int,
) -> float:
    return float(token_uncertainties(measure, marginals, viterbi)[position])


@dataclass(frozen=True)
class TokenCountDensity:
    """Gaussian KDE over sentence token counts, reflected at zero.

    Bandwidth is the Silverman rule of thumb
    ``h = 0.9 * min(sigma, IQR/1.34) * n^(-1/5)``. Reflecting each kernel at
    zero keeps the density a proper distribution on [0, inf) even when very
    short sentences put kernel mass below zero. ``degenerate`` marks the
    fallback bandwidth used when all lengths are identical.
    """

    lengths: np.ndarray
    bandwidth: float
    degenerate: bool = False

    def evaluate(self, x) -> np.ndarray | float:
        x_arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
        h = self.bandwidth
        z_direct = (x_arr[:, None] - self.lengths[None, :]) / h
        z_mirror = (x_arr[:, None] + self.lengths[None, :]) / h
        norm = 1.0 / (len(self.lengths) * h * np.sqrt(2.0 * np.pi))
        dens = norm * (
            np.exp(-0.5 * z_direct**2).sum(axis=1)
            + np.exp(-0.5 * z_mirror**2).sum(axis=1)
        )
        dens[x_arr < 0] = 0.0
        if np.isscalar(x) or np.asarray(x).ndim == 0:
            return float(dens[0])
        return dens

    @property
    def max_count(self) -> int:
        return int(self.lengths.max())


def silverman_bandwidth(lengths: np.ndarray) -> float:
    n = len(lengths)
    sigma = float(np.std(lengths, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(lengths, [75, 25])
    iqr = float(q75 - q25)
    candidates = [c for c in (sigma, iqr / 1.34) if c > 0]
    if not candidates:
        return 0.0
    return 0.9 * min(candidates) * n ** (-1.0 / 5.0)


def fit_token_count_density(source: Corpus | np.ndarray) -> TokenCountDensity:
    """Fit the length density on the full dataset's sentence token counts."""
    lengths = (
        source.sentence_lengths()
        if isinstance(source, Corpus)
        else np.asarray(source, dtype=np.float64)
    )
    lengths = lengths.astype(np.float64)
    if len(lengths) < 2:
        raise ScoringError("need at least two sentences to fit a length density")
    h = silverman_bandwidth(lengths)
    if h <= 0.0:
        warnings.warn(
            "all sentence lengths identical; using point-mass-smoothed density",
            RuntimeWarning,
        )
        return TokenCountDensity(lengths=lengths, bandwidth=1.0, degenerate=True)
    return TokenCountDensity(lengths=lengths, bandwidth=h)


@dataclass(frozen=True)
class SentenceScore:
    sentence_id: int
    phi: float
    tie_break: int  # sentence id; kept separate for clarity at sort time

    def sort_key(self):
        return (-self.phi, self.tie_break)


def _positive_tau_sum(
    sentence: Sentence, tau: np.ndarray, positive_set: frozenset | set
) -> float:
    keep = [i for i, g in enumerate(sentence.global_indices) if g in positive_set]
    if not keep:
        return 0.0
    return float(tau[keep].sum())


def score_sentence(
    strategy: AggregationStrategy,
    measure: UncertaintyMeasure,
    sentence: Sentence,
    marginals: MarginalTable,
    viterbi: ViterbiResult | None = None,
    positive_set: set | frozenset | None = None,
    density: TokenCountDensity | None = None,
) -> SentenceScore:
    """Phi for one pool sentence under an uncertainty-based strategy."""
    if strategy in NEEDS_POSITIVE_SET and positive_set is None:
        raise ScoringError(f"strategy {strategy.value} requires a positive token set")
    if strategy in NEEDS_DENSITY and density is None:
        raise ScoringError(f"strategy {strategy.value} requires a token-count density")

    tau = token_uncertainties(measure, marginals, viterbi)
    if strategy == AggregationStrategy.SINGLE:
        phi = float(tau.max())
    elif strategy == AggregationStrategy.TOTAL:
        phi = float(tau.sum())
    elif strategy == AggregationStrategy.NORMALIZED:
        phi = float(tau.sum()) / sentence.n_tokens
    elif strategy == AggregationStrategy.TOTAL_POS:
        phi = _positive_tau_sum(sentence, tau, positive_set)
    elif strategy == AggregationStrategy.DNORM_POS:
        phi = float(
            np.sqrt(density.evaluate(sentence.n_tokens))
            * _positive_tau_sum(sentence, tau, positive_set)
        )
    else:
        raise ScoringError(f"{strategy.value} is a baseline; use baseline_score")
    return SentenceScore(sentence.id, phi, sentence.id)


def baseline_score(
    strategy: AggregationStrategy,
    sentence: Sentence,
    positive_set: set | frozenset | None = None,
    density: TokenCountDensity | None = None,
    rng: np.random.Generator | None = None,
) -> SentenceScore:
    """Phi for the random / longest-sentence / positive-count baselines."""
    if strategy == AggregationStrategy.RANDOM:
        if rng is None:
            raise ScoringError("random baseline requires an rng")
        phi = float(rng.random())
    elif strategy == AggregationStrategy.LSS:
        phi = float(sentence.n_tokens)
    elif strategy == AggregationStrategy.PAS:
        if positive_set is None or density is None:
            raise ScoringError("pas requires a positive token set and a density")
        count = sum(1 for g in sentence.global_indices if g in positive_set)
        phi = float(np.sqrt(density.evaluate(sentence.n_tokens)) * count)
    else:
        raise ScoringError(f"{strategy.value} is not a baseline strategy")
    return SentenceScore(sentence.id, phi, sentence.id)


def rank_select(scores: list[SentenceScore], k: int) -> list[int]:
    """Ids of the k highest-Phi sentences.

    Ties break lexicographically: higher Phi first, then lower sentence id.
    Asking for more than the pool returns the whole pool (with a warning).
    """
    if k > len(scores):
        warnings.warn(
            f"requested batch of {k} from a pool of {len(scores)}; returning all",
            RuntimeWarning,
        )
        k = len(scores)
    ordered = sorted(scores, key=SentenceScore.sort_key)
    return [s.sentence_id for s in ordered[:k]]
