"""Autoregressive sequence-model contract and the built-in n-gram backend.

Every backend maps a token-id context to a normalized categorical
distribution over its vocabulary. The built-in backend is an interpolated
absolute-discounting n-gram model trained on serialized prompt streams;
a wire backend (see wire.py) exposes the same interface over a subprocess
or TCP connection so neural models can be dropped in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Vocabulary

UNIGRAM_FLOOR = 0.01  # add-k mass that keeps every vocab token reachable


def log_sum_exp(logprobs: np.ndarray) -> float:
    return float(np.logaddexp.reduce(logprobs))


@dataclass
class CategoricalDistribution:
    """Normalized log-probability vector over the vocabulary."""
    logprobs: np.ndarray

    def validate(self, tol: float = 1e-6) -> None:
        lp = self.logprobs
        if np.isnan(lp).any() or np.isposinf(lp).any():
            raise ValueError("distribution has NaN or +inf entries")
        lse = log_sum_exp(lp)
        if abs(lse) > tol:
            raise ValueError(f"distribution not normalized: log-sum-exp={lse}")

    def __len__(self) -> int:
        return self.logprobs.shape[0]


@dataclass(frozen=True)
class PromptLayout:
    """Serialization rule for conditioning information.

    With a perspective: post SEP perspective BOS response-prefix.
    Without:            condition BOS response-prefix.
    SEP and BOS must each occur exactly once in the serialized stream, so
    the reserved surface strings may not appear inside the conditioning text.
    """
    with_perspective: bool = True

    def context_ids(self, vocab: Vocabulary, condition_ids, perspective_ids=None,
                    prefix_ids=()) -> list[int]:
        condition_ids = list(condition_ids)
        prefix_ids = list(prefix_ids)
        if self.with_perspective:
            if perspective_ids is None:
                raise ValueError("layout requires a perspective")
            ids = condition_ids + [vocab.sep] + list(perspective_ids) + [vocab.bos] + prefix_ids
            if ids.count(vocab.sep) != 1:
                raise ValueError("SEP must occur exactly once in a serialized prompt")
        else:
            ids = condition_ids + [vocab.bos] + prefix_ids
        if ids.count(vocab.bos) != 1:
            raise ValueError("BOS must occur exactly once in a serialized prompt")
        return ids

    def stream_ids(self, vocab: Vocabulary, condition_ids, perspective_ids,
                   target_ids) -> list[int]:
        """Full training stream: context plus target plus EOS."""
        return self.context_ids(vocab, condition_ids, perspective_ids) \
            + list(target_ids) + [vocab.eos]


GENERATOR_LAYOUT = PromptLayout(with_perspective=True)
SCORER_LAYOUT = PromptLayout(with_perspective=False)


class NgramModel:
    """Interpolated absolute-discounting n-gram model.

    P(w | ctx) = (max(c(ctx,w) - D, 0) + D * N1+(ctx) * P(w | ctx')) / c(ctx)
    backing off to the next shorter context, down to an add-0.01 unigram
    floor, so every token has nonzero probability in every context.
    """

    def __init__(self, vocab: Vocabulary, order: int, discount: float,
                 layout: PromptLayout = GENERATOR_LAYOUT):
        if order < 1:
            raise ValueError("order must be >= 1")
        if not (0.0 < discount < 1.0):
            raise ValueError("discount must lie in (0, 1)")
        if len(vocab) < 5:
            raise ValueError("vocabulary too small for modeling (need >= 5 entries)")
        self.vocab = vocab
        self.order = order
        self.discount = discount
        self.layout = layout
        # counts[ctx tuple] -> {next id: count}; contexts of length 0..order-1
        self._counts: dict[tuple, dict[int, int]] = {}
        self._totals: dict[tuple, int] = {}
        self._unigram_logprobs: np.ndarray | None = None
        self._trained = False

    def add_stream(self, ids) -> None:
        ids = list(ids)
        for k in range(1, self.order + 1):
            for i in range(len(ids) - k + 1):
                ctx = tuple(ids[i:i + k - 1])
                nxt = ids[i + k - 1]
                row = self._counts.setdefault(ctx, {})
                row[nxt] = row.get(nxt, 0) + 1
                self._totals[ctx] = self._totals.get(ctx, 0) + 1
        self._trained = False

    def finalize(self) -> "NgramModel":
        total = self._totals.get((), 0)
        if total == 0:
            raise ValueError("no training streams were added")
        v = len(self.vocab)
        probs = np.full(v, UNIGRAM_FLOOR)
        for w, c in self._counts[()].items():
            probs[w] += c
        probs /= total + UNIGRAM_FLOOR * v
        self._unigram_logprobs = np.log(probs)
        self._trained = True
        return self

    def _probs(self, ctx: tuple) -> np.ndarray:
        p = np.exp(self._unigram_logprobs)
        d = self.discount
        for k in range(2, self.order + 1):
            if len(ctx) < k - 1:
                break
            sub = ctx[len(ctx) - (k - 1):]
            row = self._counts.get(sub)
            if not row:
                continue  # unseen context: distribution stays at lower order
            total = self._totals[sub]
            lam = d * len(row) / total
            p = lam * p
            for w, c in row.items():
                p[w] += (c - d) / total
        return p

    def next_logprobs(self, context_ids) -> CategoricalDistribution:
        """Distribution over the next token given a token-id context."""
        if not self._trained:
            raise RuntimeError("model not finalized")
        ctx = tuple(context_ids[-(self.order - 1):]) if self.order > 1 else ()
        dist = CategoricalDistribution(logprobs=np.log(self._probs(ctx)))
        dist.validate()
        return dist


def train_ngram(corpus: Corpus, assignments, order: int = 3,
                discount: float = 0.4, vocab: Vocabulary | None = None) -> NgramModel:
    """Train the perspective-conditioned generator backend.

    One stream per assigned pair: post SEP perspective BOS response EOS.
    Pairs without an assignment do not contribute.
    """
    from .corpus import build_vocab
    if vocab is None:
        vocab = build_vocab(corpus)
    by_id = {p.id: p for p in corpus}
    model = NgramModel(vocab, order, discount, layout=GENERATOR_LAYOUT)
    n_streams = 0
    for a in assignments:
        pair = by_id.get(a.pair_id)
        if pair is None:
            continue
        stream = GENERATOR_LAYOUT.stream_ids(
            vocab, vocab.encode(pair.post.tokens), vocab.encode([a.perspective]),
            vocab.encode(pair.response.tokens))
        model.add_stream(stream)
        n_streams += 1
    if n_streams == 0:
        raise ValueError("no pairs with assignments to train on")
    return model.finalize()


def train_scorer(corpus: Corpus, direction: str = "forward", order: int = 3,
                 discount: float = 0.4, vocab: Vocabulary | None = None) -> NgramModel:
    """Train a plain conditional scorer.

    forward: post BOS response EOS (response given post); backward swaps the
    two, so low backward perplexity marks responses that pin down their post.
    """
    from .corpus import build_vocab
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown direction: {direction!r}")
    if vocab is None:
        vocab = build_vocab(corpus)
    model = NgramModel(vocab, order, discount, layout=SCORER_LAYOUT)
    for pair in corpus:
        post = vocab.encode(pair.post.tokens)
        resp = vocab.encode(pair.response.tokens)
        cond, tgt = (post, resp) if direction == "forward" else (resp, post)
        model.add_stream(SCORER_LAYOUT.stream_ids(vocab, cond, None, tgt))
    return model.finalize()


def sequence_logprob(model, prefix_ids, target_ids) -> float:
    """Sum of log P(target_t | prefix + target_<t), including the EOS step.

    Works with any backend exposing next_logprobs and a vocabulary.
    """
    target_ids = list(target_ids)
    if not target_ids:
        raise ValueError("target must be non-empty")
    ctx = list(prefix_ids)
    total = 0.0
    for tok in target_ids + [model.vocab.eos]:
        dist = model.next_logprobs(ctx)
        total += float(dist.logprobs[tok])
        ctx.append(tok)
    return total
