"""Counterfactual dialogue-response augmentation toolkit.

Generates semantically different responses for observed dialogues by
abducting per-token Gumbel noise from the observed response, substituting
the reply perspective through a corpus-wide shift graph, re-decoding under
the fixed noise, and filtering the results with bi-directional perplexity
selection.
"""

__version__ = "0.1.0"

from .corpus import Corpus, DialoguePair, Utterance, Vocabulary, build_vocab, load_pairs, tokenize
from .embeddings import EmbeddingTable, cosine, embed_phrase, train_ppmi
from .graph import FocusAssignment, ShiftGraph, build_graph, identify_focus
from .keywords import KeywordCandidate, extract_keywords, score_term
from .scm import GumbelNoise, SeedTrail, abduct, counterfactual_predict, gumbel_max_sample
from .seqmodel import CategoricalDistribution, NgramModel, sequence_logprob, train_ngram, train_scorer
from .augment import AugmentationConfig, CounterfactualSample, augment_pair, partition_candidates
from .selection import Threshold, find_threshold, perplexity, select

__all__ = [
    "AugmentationConfig", "CategoricalDistribution", "Corpus",
    "CounterfactualSample", "DialoguePair", "EmbeddingTable",
    "FocusAssignment", "GumbelNoise", "KeywordCandidate", "NgramModel",
    "SeedTrail", "ShiftGraph", "Threshold", "Utterance", "Vocabulary",
    "abduct", "augment_pair", "build_graph", "build_vocab",
    "cosine", "counterfactual_predict", "embed_phrase", "extract_keywords",
    "find_threshold", "gumbel_max_sample", "identify_focus", "load_pairs",
    "partition_candidates", "perplexity", "score_term", "select",
    "sequence_logprob", "tokenize", "train_ngram", "train_ppmi", "train_scorer",
]
