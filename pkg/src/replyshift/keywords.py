"""Statistical keyword extraction for single utterances.

Scores every non-stoplist term with a small set of positional, frequency
and neighborhood features and ranks ascending (lower score = more salient).
The features are computed per utterance, so extraction is a pure function
of the token sequence plus the stoplist.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass


@dataclass(frozen=True)
class KeywordCandidate:
    term: str
    score: float
    positions: tuple[int, ...]


def load_stoplist(path) -> set[str]:
    """One token per line, UTF-8; blank lines ignored."""
    stop = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            tok = line.strip()
            if tok:
                stop.add(tok)
    return stop


def _term_stats(tokens):
    positions: dict[str, list[int]] = {}
    for i, tok in enumerate(tokens):
        positions.setdefault(tok, []).append(i)
    left: dict[str, set[str]] = {t: set() for t in positions}
    right: dict[str, set[str]] = {t: set() for t in positions}
    left_n = {t: 0 for t in positions}
    right_n = {t: 0 for t in positions}
    n = len(tokens)
    for i, tok in enumerate(tokens):
        if i > 0:
            left[tok].add(tokens[i - 1])
            left_n[tok] += 1
        if i < n - 1:
            right[tok].add(tokens[i + 1])
            right_n[tok] += 1
    return positions, left, right, left_n, right_n


def _score(term, positions, left, right, left_n, right_n, mean_tf, max_tf) -> float:
    pos = math.log(2.0 + statistics.median(positions[term]))
    tf = len(positions[term])
    freq = tf / mean_tf
    dl = len(left[term]) / left_n[term] if left_n[term] else 0.0
    dr = len(right[term]) / right_n[term] if right_n[term] else 0.0
    rel = 1.0 + ((dl + dr) / 2.0) * tf / max_tf
    return (pos * rel) / (freq + 1.0 / rel)


def score_term(term: str, utterance, stoplist: set[str] | None = None) -> float:
    """Salience score of one term occurring in the utterance (lower = better)."""
    stoplist = stoplist or set()
    if term in stoplist:
        raise ValueError(f"term is stoplisted: {term!r}")
    tokens = list(utterance.tokens)
    positions, left, right, left_n, right_n = _term_stats(tokens)
    if term not in positions:
        raise ValueError(f"term does not occur in utterance: {term!r}")
    cand_tfs = [len(p) for t, p in positions.items() if t not in stoplist]
    mean_tf = sum(cand_tfs) / len(cand_tfs)
    max_tf = max(cand_tfs)
    return _score(term, positions, left, right, left_n, right_n, mean_tf, max_tf)


def extract_keywords(utterance, stoplist: set[str] | None = None, max_k: int = 5,
                     pos_table: dict[str, str] | None = None,
                     allowed_pos: tuple[str, ...] = ("NOUN", "ADJ", "VERB"),
                     ) -> list[KeywordCandidate]:
    """Ranked keywords of one utterance, most salient first.

    Terms in the stoplist are never candidates. When a part-of-speech table
    is supplied, candidates are additionally limited to the allowed tags
    (tokens missing from the table are dropped); by default no tagger is
    assumed and the filter is off. Ties break lexicographically and at most
    max_k candidates are returned.
    """
    if max_k < 1:
        raise ValueError("max_k must be >= 1")
    stoplist = stoplist or set()
    tokens = list(utterance.tokens)
    if not tokens:
        return []
    positions, left, right, left_n, right_n = _term_stats(tokens)
    cands = [t for t in positions if t not in stoplist]
    if pos_table is not None:
        cands = [t for t in cands if pos_table.get(t) in allowed_pos]
    if not cands:
        return []
    cand_tfs = [len(positions[t]) for t in cands]
    mean_tf = sum(cand_tfs) / len(cand_tfs)
    max_tf = max(cand_tfs)
    scored = [KeywordCandidate(term=t,
                               score=_score(t, positions, left, right,
                                            left_n, right_n, mean_tf, max_tf),
                               positions=tuple(positions[t]))
              for t in cands]
    scored.sort(key=lambda k: (k.score, k.term))
    return scored[:max_k]
