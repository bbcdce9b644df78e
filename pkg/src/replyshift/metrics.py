"""Automatic evaluation of augmented responses and ranked retrieval output.

Diversity is measured with distinct-n (unique n-gram ratio) within and
across a post's responses, novelty-n (n-grams absent from the original
response), a smoothed BLEU against references, and a greedy-match
embedding F1 as a lightweight semantic-similarity analog. Retrieval
quality uses mean average precision and recall-at-k over 10-candidate
pools. Special tokens never count as content n-grams.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from math import exp, log

from .corpus import SPECIAL_TOKENS
from .embeddings import EmbeddingTable, cosine

BLEU_EPS = 1e-9


@dataclass
class ResponseGroup:
    post_id: str
    responses: list  # list of token sequences
    original: list | None = None  # token sequence of the observed response


@dataclass
class RankedQuery:
    labels: list  # 1 = relevant candidate, 0 = irrelevant
    scores: list  # model scores, higher = ranked earlier


def _content(tokens) -> list[str]:
    return [t for t in tokens if t not in SPECIAL_TOKENS]


def ngrams(tokens, n: int) -> list[tuple]:
    tokens = list(tokens)
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def distinct_n(group: ResponseGroup, n: int, mode: str = "intra") -> float:
    """Unique n-gram ratio, within each response (intra, averaged) or over
    the pooled n-grams of the whole group (inter).

    Responses shorter than n contribute no n-grams and are excluded from
    the intra average.
    """
    if mode not in ("intra", "inter"):
        raise ValueError(f"unknown mode: {mode!r}")
    grams_per_response = [ngrams(_content(r), n) for r in group.responses]
    if mode == "intra":
        ratios = [len(set(g)) / len(g) for g in grams_per_response if g]
        return sum(ratios) / len(ratios) if ratios else 0.0
    pooled = [g for grams in grams_per_response for g in grams]
    return len(set(pooled)) / len(pooled) if pooled else 0.0


def novelty_n(group: ResponseGroup, n: int, mode: str = "intra") -> float:
    """Ratio of n-grams not present in the group's original response."""
    if mode not in ("intra", "inter"):
        raise ValueError(f"unknown mode: {mode!r}")
    if group.original is None:
        raise ValueError("novelty needs the original response")
    seen = set(ngrams(_content(group.original), n))
    grams_per_response = [ngrams(_content(r), n) for r in group.responses]
    if mode == "intra":
        ratios = [sum(1 for g in grams if g not in seen) / len(grams)
                  for grams in grams_per_response if grams]
        return sum(ratios) / len(ratios) if ratios else 0.0
    pooled = [g for grams in grams_per_response for g in grams]
    if not pooled:
        return 0.0
    return sum(1 for g in pooled if g not in seen) / len(pooled)


def bleu(candidate, references, max_n: int = 3) -> float:
    """Smoothed BLEU with uniform weights over n = 1..max_n.

    Clipped n-gram precisions get an epsilon floor when a precision is
    zero; orders for which the candidate has no n-grams at all are skipped
    so a candidate identical to its reference scores exactly 1. Brevity
    penalty uses the reference length closest to the candidate's.
    """
    candidate = _content(candidate)
    references = [_content(r) for r in references]
    if not candidate:
        raise ValueError("candidate must be non-empty")
    if not references:
        raise ValueError("need at least one reference")
    log_precisions = []
    for n in range(1, max_n + 1):
        cand_grams = Counter(ngrams(candidate, n))
        total = sum(cand_grams.values())
        if total == 0:
            continue
        max_ref = Counter()
        for ref in references:
            ref_grams = Counter(ngrams(ref, n))
            for g, c in ref_grams.items():
                if c > max_ref[g]:
                    max_ref[g] = c
        clipped = sum(min(c, max_ref[g]) for g, c in cand_grams.items())
        p = clipped / total if clipped > 0 else BLEU_EPS / total
        log_precisions.append(log(p))
    score = exp(sum(log_precisions) / len(log_precisions))
    c_len = len(candidate)
    r_len = min((len(r) for r in references),
                key=lambda rl: (abs(rl - c_len), rl))
    bp = 1.0 if c_len >= r_len else exp(1.0 - r_len / c_len)
    return bp * score


def semantic_f1(emb: EmbeddingTable, a, b) -> float:
    """Greedy-match embedding F1 between two token sequences.

    Precision is the mean over tokens of a of the best cosine against b;
    recall is symmetric; returns 0 when the two means cancel or vanish.
    """
    a = list(a)
    b = list(b)
    if not a or not b:
        raise ValueError("both token sequences must be non-empty")
    vecs_a = [emb.vector(t) for t in a]
    vecs_b = [emb.vector(t) for t in b]
    precision = sum(max(cosine(va, vb) for vb in vecs_b) for va in vecs_a) / len(a)
    recall = sum(max(cosine(vb, va) for va in vecs_a) for vb in vecs_b) / len(b)
    if precision + recall <= 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def group_semantic_diversity(emb: EmbeddingTable, responses) -> float:
    """Mean greedy-match F1 over the unordered response pairs of a group.

    Lower values mean the responses differ more from one another.
    """
    pairs = list(combinations(responses, 2))
    if not pairs:
        raise ValueError("need at least 2 responses")
    return sum(semantic_f1(emb, a, b) for a, b in pairs) / len(pairs)


def _ranking(query: RankedQuery) -> list[int]:
    if len(query.labels) != len(query.scores):
        raise ValueError("labels and scores must align")
    order = sorted(range(len(query.scores)),
                   key=lambda i: (-query.scores[i], i))
    return [int(bool(query.labels[i])) for i in order]


def average_precision(query: RankedQuery) -> float:
    """Mean over relevant items of precision at their rank."""
    ranked = _ranking(query)
    if sum(ranked) == 0:
        raise ValueError("query has no relevant candidate")
    hits = 0
    precisions = []
    for rank, rel in enumerate(ranked, start=1):
        if rel:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


def mean_avg_precision(queries) -> float:
    queries = list(queries)
    if not queries:
        raise ValueError("need at least one query")
    return sum(average_precision(q) for q in queries) / len(queries)


def recall_at_k(queries, k: int) -> float:
    """Mean fraction of a query's relevant candidates found in the top k.

    Pools must contain exactly 10 candidates.
    """
    queries = list(queries)
    if not queries:
        raise ValueError("need at least one query")
    total = 0.0
    for q in queries:
        ranked = _ranking(q)
        if len(ranked) != 10:
            raise ValueError(f"candidate pool must have 10 entries, got {len(ranked)}")
        relevant = sum(ranked)
        if relevant == 0:
            raise ValueError("query has no relevant candidate")
        total += sum(ranked[:k]) / relevant
    return total / len(queries)
