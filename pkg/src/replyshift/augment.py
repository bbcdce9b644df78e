"""Counterfactual augmentation loop over focuses and candidate subsets.

For each dialogue pair: abduct the noise once under the observed
(post, perspective, response), then for every post keyword take the 1-hop
graph neighbors as candidate perspectives (minus the observed one), split
them into roughly equal subsets, predict one substituted perspective per
subset and re-decode the response under the fixed noise.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

from .embeddings import EmbeddingTable, cosine, embed_phrase
from .graph import FocusAssignment, ShiftGraph
from .keywords import KeywordCandidate
from .scm import AbductionDegenerateError, SeedTrail, abduct, counterfactual_predict


@dataclass(frozen=True)
class AugmentationConfig:
    k_init: int = 20
    cand_min: int = 5
    cand_max: int = 100
    temperature: float = 0.5
    max_len: int = 50
    master_seed: int = 0
    noise_scope: str = "per_pair"  # or "per_perspective"
    drop_identical: bool = True

    def __post_init__(self):
        if not (1 <= self.cand_min <= self.cand_max):
            raise ValueError("need 1 <= cand_min <= cand_max")
        if self.k_init < 1:
            raise ValueError("k_init must be >= 1")
        if self.noise_scope not in ("per_pair", "per_perspective"):
            raise ValueError(f"unknown noise_scope: {self.noise_scope!r}")


@dataclass
class PartitionPlan:
    subset_size: int
    subset_count: int
    subsets: list[list[str]]


@dataclass
class CounterfactualSample:
    pair_id: str
    post: tuple[str, ...]
    response: tuple[str, ...]
    focus: str
    perspective: str
    subset: int
    truncated: bool = False

    def to_json(self) -> dict:
        return {"pair_id": self.pair_id, "post": list(self.post),
                "response": list(self.response), "focus": self.focus,
                "perspective": self.perspective, "subset": self.subset,
                "truncated": self.truncated}

    @classmethod
    def from_json(cls, obj: dict) -> "CounterfactualSample":
        return cls(pair_id=str(obj["pair_id"]), post=tuple(obj["post"]),
                   response=tuple(obj["response"]), focus=obj["focus"],
                   perspective=obj["perspective"], subset=int(obj["subset"]),
                   truncated=bool(obj["truncated"]))


def sample_key(*parts) -> int:
    """Stable 64-bit key for RNG streams, derived from string/int parts."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def partition_candidates(cands: list[str], config: AugmentationConfig,
                         ) -> PartitionPlan | None:
    """Split the ordered candidate list into roughly equal contiguous subsets.

    Subset size is |cands|/k_init floored, clamped into
    [cand_min, cand_max]; the subset count is re-derived from that size and
    leftover candidates are appended to the last subset. Candidate lists
    shorter than cand_min are skipped (no plan).
    """
    n = len(cands)
    if n < config.cand_min:
        return None
    size = max(min(n // config.k_init, config.cand_max), config.cand_min)
    count = max(n // size, 1)
    subsets = [list(cands[i * size:(i + 1) * size]) for i in range(count)]
    subsets[-1].extend(cands[count * size:])
    return PartitionPlan(subset_size=size, subset_count=count, subsets=subsets)


class BaselinePerspectivePredictor:
    """Scores candidates by post similarity plus shift-edge popularity.

    score = alpha * cosine(candidate, post) + beta * ln(1 + edge weight),
    ties broken lexicographically.
    """

    def __init__(self, emb: EmbeddingTable, graph: ShiftGraph,
                 alpha: float = 1.0, beta: float = 0.5):
        self.emb = emb
        self.graph = graph
        self.alpha = alpha
        self.beta = beta

    def choose(self, post_tokens, focus: str, subset: list[str]) -> str:
        if not subset:
            raise ValueError("candidate subset is empty")
        post_vec = embed_phrase(self.emb, post_tokens)
        def score(cand: str) -> float:
            sim = cosine(self.emb.vector(cand), post_vec)
            pop = math.log(1.0 + self.graph.weight(focus, cand))
            return self.alpha * sim + self.beta * pop
        return min(subset, key=lambda c: (-score(c), c))


def predict_perspective(predictor, post_tokens, focus: str, subset: list[str]) -> str:
    """Substituted perspective for one candidate subset."""
    choice = predictor.choose(post_tokens, focus, subset)
    if choice not in subset:
        raise ValueError(f"predictor returned {choice!r}, not a member of the subset")
    return choice


@dataclass
class PairReport:
    pair_id: str
    samples: list[CounterfactualSample] = field(default_factory=list)
    skips: dict = field(default_factory=dict)

    def skip(self, reason: str) -> None:
        self.skips[reason] = self.skips.get(reason, 0) + 1


def augment_pair(pair, kx: list[KeywordCandidate], assignment: FocusAssignment,
                 graph: ShiftGraph, generator, predictor,
                 config: AugmentationConfig) -> PairReport:
    """All counterfactual samples for one pair.

    Noise is abducted once per pair by default (one environment per
    observed dialogue); per_perspective scope re-abducts per subset with a
    distinct stream key. Samples whose response reproduces the observed one
    (or repeats an earlier sample of the same pair) are dropped when
    drop_identical is set.
    """
    if assignment.pair_id != pair.id:
        raise ValueError("assignment does not belong to this pair")
    report = PairReport(pair_id=pair.id)
    vocab = generator.vocab
    x_ids = vocab.encode(pair.post.tokens)
    y_ids = vocab.encode(pair.response.tokens)
    z_ids = vocab.encode([assignment.perspective])

    noise = None
    if config.noise_scope == "per_pair":
        try:
            noise = abduct(generator, x_ids, z_ids, y_ids,
                           SeedTrail(config.master_seed, sample_key(pair.id)))
        except AbductionDegenerateError:
            report.skip("abduction_degenerate")
            return report

    seen_responses = {tuple(pair.response.tokens)} if config.drop_identical else None
    for fi, kw in enumerate(kx):
        cands = [z for z in graph.neighbors(kw.term) if z != assignment.perspective]
        plan = partition_candidates(cands, config)
        if plan is None:
            report.skip("too_few_candidates")
            continue
        for si, subset in enumerate(plan.subsets):
            if config.noise_scope == "per_perspective":
                try:
                    noise = abduct(generator, x_ids, z_ids, y_ids,
                                   SeedTrail(config.master_seed,
                                             sample_key(pair.id, fi, si)))
                except AbductionDegenerateError:
                    report.skip("abduction_degenerate")
                    continue
            z_new = predict_perspective(predictor, pair.post.tokens, kw.term, subset)
            out_ids, truncated = counterfactual_predict(
                generator, x_ids, vocab.encode([z_new]), noise,
                temperature=config.temperature, max_len=config.max_len)
            if out_ids and out_ids[-1] == vocab.eos:
                out_ids = out_ids[:-1]
            tokens = tuple(vocab.decode(out_ids))
            if not tokens and not truncated:
                report.skip("empty_generation")
                continue
            if seen_responses is not None:
                if tokens in seen_responses:
                    report.skip("identical_response")
                    continue
                seen_responses.add(tokens)
            report.samples.append(CounterfactualSample(
                pair_id=pair.id, post=pair.post.tokens, response=tokens,
                focus=kw.term, perspective=z_new, subset=si, truncated=truncated))
    return report


def write_samples(samples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def read_samples(path) -> list[CounterfactualSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(CounterfactualSample.from_json(json.loads(line)))
    return out
