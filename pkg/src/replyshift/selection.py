"""Bi-directional perplexity selection of augmented samples.

Forward perplexity (response given post) gates validity against a
threshold tuned on the validation split; backward perplexity (post given
response) reranks the survivors of each post so generic responses sink.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .seqmodel import SCORER_LAYOUT, sequence_logprob


@dataclass
class ScoredSample:
    sample: object  # anything with pair_id; typically a CounterfactualSample
    sid: int
    fwd_ppl: float
    bwd_ppl: float


@dataclass(frozen=True)
class Threshold:
    eta: float
    accuracy: float


def perplexity(scorer, condition_tokens, target_tokens) -> float:
    """exp of the negative mean token log-probability, EOS step included."""
    target_tokens = list(target_tokens)
    if not target_tokens:
        raise ValueError("target must be non-empty")
    vocab = scorer.vocab
    prefix = SCORER_LAYOUT.context_ids(vocab, vocab.encode(condition_tokens))
    lp = sequence_logprob(scorer, prefix, vocab.encode(target_tokens))
    return math.exp(-lp / (len(target_tokens) + 1))


def _derangement(n: int, rng: np.random.Generator) -> list[int]:
    # Sattolo's algorithm: a uniform random n-cycle, hence no fixed points
    idx = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i))
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def threshold_from_scores(positives, negatives) -> Threshold:
    """Accuracy-maximizing threshold over precomputed perplexity values.

    Candidate thresholds are the midpoints between consecutive distinct
    values, plus one below the minimum and one at the maximum so chance
    accuracy 0.5 is always attainable. A sample counts as valid iff its
    perplexity is at most the threshold; ties on accuracy go to the
    smallest threshold.
    """
    positives = list(positives)
    negatives = list(negatives)
    if not positives or not negatives:
        raise ValueError("need both positive and negative scores")
    values = sorted(set(positives) | set(negatives))
    candidates = [values[0] - 1.0]
    candidates += [(a + b) / 2.0 for a, b in zip(values, values[1:])]
    candidates.append(values[-1])
    total = len(positives) + len(negatives)
    best_eta, best_acc = None, -1.0
    for eta in candidates:
        correct = sum(1 for v in positives if v <= eta) \
            + sum(1 for v in negatives if v > eta)
        acc = correct / total
        if acc > best_acc:
            best_eta, best_acc = eta, acc
    return Threshold(eta=float(best_eta), accuracy=float(best_acc))


def find_threshold(val_corpus, fwd_scorer, rng: np.random.Generator) -> Threshold:
    """Best single forward-perplexity threshold on the validation split.

    Valid examples are the observed pairs; invalid ones pair each post with
    another pair's response (a seeded derangement, so no post keeps its own
    response).
    """
    pairs = list(val_corpus)
    n = len(pairs)
    if n < 2:
        raise ValueError("need at least 2 validation pairs to build negatives")
    perm = _derangement(n, rng)
    positives = [perplexity(fwd_scorer, p.post.tokens, p.response.tokens) for p in pairs]
    negatives = [perplexity(fwd_scorer, pairs[i].post.tokens,
                            pairs[perm[i]].response.tokens) for i in range(n)]
    return threshold_from_scores(positives, negatives)


def score_samples(samples, fwd_scorer, bwd_scorer) -> list[ScoredSample]:
    """Forward and backward perplexity for every sample, in input order."""
    scored = []
    for sid, s in enumerate(samples):
        fwd = perplexity(fwd_scorer, s.post, s.response)
        bwd = perplexity(bwd_scorer, s.response, s.post)
        scored.append(ScoredSample(sample=s, sid=sid, fwd_ppl=fwd, bwd_ppl=bwd))
    return scored


def select(scored: list[ScoredSample], eta: float, m_per_post: int,
           ) -> list[ScoredSample]:
    """Filter by forward perplexity, then rerank each post by backward
    perplexity (ascending) and keep the first m_per_post samples.

    Ties rank by ascending forward perplexity, then sample id.
    """
    if m_per_post < 1:
        raise ValueError("m_per_post must be >= 1")
    groups: dict[str, list[ScoredSample]] = {}
    order: list[str] = []
    for s in scored:
        if s.fwd_ppl > eta:
            continue
        key = s.sample.pair_id
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(s)
    kept = []
    for key in order:
        group = sorted(groups[key], key=lambda s: (s.bwd_ppl, s.fwd_ppl, s.sid))
        kept.extend(group[:m_per_post])
    return kept
