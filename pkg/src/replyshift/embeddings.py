"""Token vectors for semantic-closeness decisions.

The built-in trainer computes positive PMI over windowed co-occurrence
counts and compresses rows with a seeded random projection, which is cheap,
deterministic and good enough for argmax-style closeness comparisons.
Higher-fidelity vectors can be loaded from an external text file.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    vec_of: dict = field(repr=False)
    provenance: str = "ppmi"

    def vector(self, token: str) -> np.ndarray:
        """Vector of a token; unknown tokens get the zero vector."""
        v = self.vec_of.get(token)
        if v is None:
            return np.zeros(self.dim)
        return v

    def __contains__(self, token: str) -> bool:
        return token in self.vec_of


def train_ppmi(corpus, window: int = 5, dim: int = 128, seed: int = 0) -> EmbeddingTable:
    """PPMI co-occurrence embeddings with a seeded random projection.

    Co-occurrence is counted symmetrically within +-window inside each
    utterance. Deterministic given (corpus, window, dim, seed).
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if len(corpus) == 0:
        raise ValueError("cannot train embeddings on an empty corpus")

    freq = Counter()
    for utt in corpus.utterances():
        freq.update(utt.tokens)
    tokens = sorted(freq, key=lambda t: (-freq[t], t))
    index = {t: i for i, t in enumerate(tokens)}
    n = len(tokens)

    cooc: Counter = Counter()
    for utt in corpus.utterances():
        ids = [index[t] for t in utt.tokens]
        m = len(ids)
        for i in range(m):
            lo = max(0, i - window)
            hi = min(m, i + window + 1)
            for j in range(lo, hi):
                if j != i:
                    cooc[(ids[i], ids[j])] += 1

    if not cooc:
        # single-token utterances only: no context, all vectors zero
        rows = np.zeros((n, dim))
    else:
        keys = sorted(cooc)
        rows_idx = np.array([k[0] for k in keys])
        cols_idx = np.array([k[1] for k in keys])
        vals = np.array([cooc[k] for k in keys], dtype=float)
        row_tot = np.zeros(n)
        np.add.at(row_tot, rows_idx, vals)
        total = vals.sum()
        pmi = np.log(vals * total / (row_tot[rows_idx] * row_tot[cols_idx]))
        ppmi = np.maximum(pmi, 0.0)
        rng = np.random.default_rng(seed)
        proj = rng.standard_normal((n, dim)) / np.sqrt(dim)
        rows = np.zeros((n, dim))
        np.add.at(rows, rows_idx, ppmi[:, None] * proj[cols_idx])

    return EmbeddingTable(dim=dim,
                          vec_of={t: rows[index[t]] for t in tokens},
                          provenance="ppmi")


def load_embeddings(path) -> EmbeddingTable:
    """Text format: one line per token, `token v1 ... vd`, space separated."""
    vec_of = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                if not line.strip():
                    continue
                raise ValueError(f"line {lineno}: expected `token floats...`")
            token = parts[0]
            vec = np.array([float(x) for x in parts[1:]])
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise ValueError(f"line {lineno}: dimension {vec.shape[0]} != {dim}")
            vec_of[token] = vec
    if dim is None:
        raise ValueError(f"{path}: no vectors found")
    return EmbeddingTable(dim=dim, vec_of=vec_of, provenance="external-file")


def embed_phrase(table: EmbeddingTable, tokens) -> np.ndarray:
    """Mean of the per-token vectors.

    Unknown tokens contribute zero vectors but still count in the
    denominator, so a phrase of unknowns averages to zero.
    """
    tokens = list(tokens)
    if not tokens:
        raise ValueError("cannot embed an empty token sequence")
    acc = np.zeros(table.dim)
    for t in tokens:
        acc += table.vector(t)
    return acc / len(tokens)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0 when either vector has zero norm.

    The zero-norm convention keeps unknown-token phrases from ever winning
    a closeness argmax.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
