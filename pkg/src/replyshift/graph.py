"""Shift graph: directed keyword-to-keyword edges aggregated over a corpus.

For each dialogue pair we pick the post keyword most aligned with the
response (the focus) and the response keyword most aligned with that focus
(the reply perspective), then connect focus -> perspective. Edge weights
count supporting pairs; 1-hop neighborhoods of a focus are the candidate
perspectives used at augmentation time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .embeddings import EmbeddingTable, cosine, embed_phrase
from .keywords import KeywordCandidate, extract_keywords


@dataclass(frozen=True)
class FocusAssignment:
    pair_id: str
    focus: str
    perspective: str


class ShiftGraph:
    """Weighted directed graph: vertices are keywords, edges are shifts."""

    def __init__(self):
        self._adj: dict[str, dict[str, int]] = {}
        self._vertices: set[str] = set()

    def add_edge(self, c: str, z: str, w: int = 1) -> None:
        if w < 1:
            raise ValueError("edge weight must be >= 1")
        self._vertices.add(c)
        self._vertices.add(z)
        out = self._adj.setdefault(c, {})
        out[z] = out.get(z, 0) + w

    def weight(self, c: str, z: str) -> int:
        return self._adj.get(c, {}).get(z, 0)

    @property
    def vertices(self) -> set[str]:
        return set(self._vertices)

    def edges(self):
        for c in self._adj:
            for z, w in self._adj[c].items():
                yield c, z, w

    def num_vertices(self) -> int:
        return len(self._vertices)

    def num_edges(self) -> int:
        return sum(len(out) for out in self._adj.values())

    def total_weight(self) -> int:
        return sum(w for _, _, w in self.edges())

    def neighbors(self, c: str) -> list[str]:
        """Out-neighbors sorted by descending weight, then lexicographically.

        Unknown vertices have no neighbors.
        """
        out = self._adj.get(c)
        if not out:
            return []
        return sorted(out, key=lambda z: (-out[z], z))


def _closest(cands: list[KeywordCandidate], target_vec, emb: EmbeddingTable) -> KeywordCandidate:
    # ties: higher cosine first, then lower keyword score, then lexicographic
    ranked = sorted(cands,
                    key=lambda kw: (-cosine(emb.vector(kw.term), target_vec),
                                    kw.score, kw.term))
    return ranked[0]


def identify_focus(pair, kx: list[KeywordCandidate], ky: list[KeywordCandidate],
                   emb: EmbeddingTable) -> FocusAssignment:
    """Pick the focus from the post keywords and the perspective from the
    response keywords.

    The focus is the post keyword whose embedding is closest to the whole
    response; the perspective is the response keyword closest to the focus.
    """
    if not kx or not ky:
        raise ValueError("both utterances need at least one keyword")
    response_vec = embed_phrase(emb, pair.response.tokens)
    focus = _closest(kx, response_vec, emb)
    perspective = _closest(ky, emb.vector(focus.term), emb)
    return FocusAssignment(pair_id=pair.id, focus=focus.term,
                           perspective=perspective.term)


@dataclass
class GraphBuildResult:
    graph: ShiftGraph
    assignments: list[FocusAssignment]
    skipped: dict = field(default_factory=dict)

    @property
    def num_skipped(self) -> int:
        return sum(self.skipped.values())


def build_graph(corpus, emb: EmbeddingTable, stoplist: set[str] | None = None,
                max_k: int = 5, pos_table: dict[str, str] | None = None,
                ) -> GraphBuildResult:
    """One focus/perspective assignment attempt per pair, aggregated.

    Pairs without keywords on either side are skipped and counted, never
    fatal. Repeated (focus, perspective) shifts accumulate edge weight.
    """
    graph = ShiftGraph()
    assignments: list[FocusAssignment] = []
    skipped: dict[str, int] = {}
    for pair in corpus:
        kx = extract_keywords(pair.post, stoplist, max_k, pos_table)
        ky = extract_keywords(pair.response, stoplist, max_k, pos_table)
        if not kx or not ky:
            reason = "no_post_keywords" if not kx else "no_response_keywords"
            skipped[reason] = skipped.get(reason, 0) + 1
            continue
        assignment = identify_focus(pair, kx, ky, emb)
        graph.add_edge(assignment.focus, assignment.perspective)
        assignments.append(assignment)
    return GraphBuildResult(graph=graph, assignments=assignments, skipped=skipped)


def write_graph(graph: ShiftGraph, path) -> None:
    """JSONL, one edge per line, sorted by (c, z) for reproducible bytes."""
    with open(path, "w", encoding="utf-8") as fh:
        for c, z, w in sorted(graph.edges()):
            fh.write(json.dumps({"c": c, "z": z, "w": w}, ensure_ascii=False) + "\n")


def read_graph(path) -> ShiftGraph:
    graph = ShiftGraph()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            graph.add_edge(obj["c"], obj["z"], int(obj["w"]))
    return graph


def write_assignments(assignments, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in assignments:
            fh.write(json.dumps({"pair_id": a.pair_id, "c": a.focus, "z": a.perspective},
                                ensure_ascii=False) + "\n")


def read_assignments(path) -> list[FocusAssignment]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(FocusAssignment(pair_id=str(obj["pair_id"]),
                                       focus=obj["c"], perspective=obj["z"]))
    return out
