import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from replyshift.selection import (
    ScoredSample, _derangement, find_threshold, perplexity, select,
    threshold_from_scores,
)
from replyshift.seqmodel import train_scorer

from .conftest import corpus_of
from .stubs import ChainModel, UniformModel, make_vocab
from .test_seqmodel import ref_ngram_prob


class TestPerplexity:
    def test_deterministic_chain_is_one(self):
        vocab = make_vocab("p", "r")
        p, r = vocab.encode(["p", "r"])
        # the scripted chain covers condition + BOS + response, so every
        # scored step has probability 1
        model = ChainModel(vocab, [p, vocab.bos, r])
        assert perplexity(model, ["p"], ["r"]) == pytest.approx(1.0)

    def test_uniform_model_gives_vocab_size(self):
        vocab = make_vocab("a", "b", "c", "d")
        model = UniformModel(vocab)
        assert perplexity(model, ["a"], ["b", "c"]) == pytest.approx(len(vocab))

    def test_matches_bruteforce_counts(self):
        corpus = corpus_of(("a b", "c"), ("a", "c d"), ("b", "d"))
        model = train_scorer(corpus, "forward", order=2, discount=0.4)
        vocab = model.vocab
        cond, tgt = ["a"], ["c"]
        # reconstruct the training streams and re-derive every step estimate
        streams = []
        for pair in corpus:
            streams.append(vocab.encode(pair.post.tokens) + [vocab.bos]
                           + vocab.encode(pair.response.tokens) + [vocab.eos])
        ctx = vocab.encode(cond) + [vocab.bos]
        total = 0.0
        for tok in vocab.encode(tgt) + [vocab.eos]:
            total += math.log(ref_ngram_prob(streams, len(vocab), 2, 0.4, ctx, tok))
            ctx = ctx + [tok]
        expected = math.exp(-total / (len(tgt) + 1))
        assert perplexity(model, cond, tgt) == pytest.approx(expected, rel=1e-9)

    def test_empty_target_error(self):
        model = UniformModel(make_vocab("a"))
        with pytest.raises(ValueError):
            perplexity(model, ["a"], [])


class TestThresholdFromScores:
    def test_separable_midpoint(self):
        # enumerate candidates by hand: midpoints 5.5, 28, 55 plus the
        # boundary candidates; 28 separates perfectly
        th = threshold_from_scores([5.0, 6.0], [50.0, 60.0])
        assert th.eta == pytest.approx(28.0)
        assert th.accuracy == 1.0

    def test_interleaved_scores_chance_accuracy(self):
        th = threshold_from_scores([1.0, 3.0], [1.0, 3.0])
        assert th.accuracy == pytest.approx(0.5)
        assert math.isfinite(th.eta)

    def test_inverted_ranges_still_at_least_chance(self):
        th = threshold_from_scores([50.0, 60.0], [5.0, 6.0])
        assert th.accuracy >= 0.5

    def test_tie_takes_smallest_eta(self):
        th = threshold_from_scores([1.0], [2.0])
        assert th.eta == pytest.approx(1.5)
        assert th.accuracy == 1.0

    @given(st.lists(st.floats(1.0, 100.0), min_size=1, max_size=10),
           st.lists(st.floats(1.0, 100.0), min_size=1, max_size=10))
    def test_accuracy_range(self, pos, neg):
        th = threshold_from_scores(pos, neg)
        assert 0.0 <= th.accuracy <= 1.0
        if len(pos) == len(neg):
            assert th.accuracy >= 0.5

    def test_disjoint_ranges_perfect_and_eta_between(self):
        rng = np.random.default_rng(5)
        pos = list(rng.uniform(1, 5, size=20))
        neg = list(rng.uniform(10, 20, size=20))
        th = threshold_from_scores(pos, neg)
        assert th.accuracy == 1.0
        assert max(pos) < th.eta < min(neg)


class TestFindThreshold:
    def test_derangement_has_no_fixed_points(self):
        rng = np.random.default_rng(0)
        for n in (2, 3, 7, 30):
            perm = _derangement(n, rng)
            assert sorted(perm) == list(range(n))
            assert all(perm[i] != i for i in range(n))

    def test_needs_two_pairs(self):
        corpus = corpus_of(("a", "b"), split="validation")
        model = UniformModel(make_vocab("a", "b"))
        with pytest.raises(ValueError):
            find_threshold(corpus, model, np.random.default_rng(0))

    def test_on_toy_corpus(self, toy_dir):
        from replyshift.corpus import load_pairs
        train = load_pairs(toy_dir / "train.jsonl")
        val = load_pairs(toy_dir / "valid.jsonl", split="validation")
        fwd = train_scorer(train, "forward", order=4, discount=0.4)
        th = find_threshold(val, fwd, np.random.default_rng(1))
        assert 0.5 <= th.accuracy <= 1.0
        assert th.accuracy >= 0.9  # planted structure separates cleanly
        assert th.eta > 0


def scored(pair_id, sid, fwd, bwd):
    class Mini:
        def __init__(self, pid):
            self.pair_id = pid
    return ScoredSample(sample=Mini(pair_id), sid=sid, fwd_ppl=fwd, bwd_ppl=bwd)


class TestSelect:
    def test_rerank_by_backward(self):
        samples = [scored("p", 0, 1.0, 30.0), scored("p", 1, 1.0, 10.0),
                   scored("p", 2, 1.0, 20.0)]
        kept = select(samples, eta=5.0, m_per_post=2)
        assert [s.sid for s in kept] == [1, 2]

    def test_eta_below_everything_empty(self):
        samples = [scored("p", 0, 2.0, 1.0)]
        assert select(samples, eta=1.0, m_per_post=3) == []

    def test_two_stage_hand_trace(self):
        samples = [scored("p", 0, 3.0, 9.0),   # passes, bwd 9
                   scored("p", 1, 12.0, 1.0),  # fails the filter
                   scored("p", 2, 2.0, 4.0)]   # passes, bwd 4
        kept = select(samples, eta=5.0, m_per_post=5)
        assert [s.sid for s in kept] == [2, 0]

    def test_groups_independent(self):
        samples = [scored("p", 0, 1.0, 5.0), scored("q", 1, 1.0, 1.0),
                   scored("p", 2, 1.0, 2.0)]
        kept = select(samples, eta=2.0, m_per_post=1)
        assert sorted(s.sid for s in kept) == [1, 2]

    def test_tie_breaks_fwd_then_sid(self):
        samples = [scored("p", 1, 2.0, 5.0), scored("p", 0, 2.0, 5.0),
                   scored("p", 2, 1.0, 5.0)]
        kept = select(samples, eta=5.0, m_per_post=2)
        assert [s.sid for s in kept] == [2, 0]

    def test_monotone_in_eta_and_permutation(self):
        rng = np.random.default_rng(9)
        samples = [scored(f"p{i % 4}", i, float(rng.uniform(1, 10)),
                          float(rng.uniform(1, 10))) for i in range(40)]
        big_m = 100
        previous = set()
        for eta in (2.0, 4.0, 6.0, 8.0, 10.0):
            kept = {s.sid for s in select(samples, eta, big_m)}
            assert previous <= kept
            previous = kept
        kept = select(samples, 10.0, big_m)
        assert sorted(s.sid for s in kept) == sorted({s.sid for s in kept})
