"""Dialogue corpus ingestion: tokenization, pair loading, vocabulary.

A corpus is a list of (post, response) utterance pairs belonging to one
split. Tokenization is pluggable (whitespace for space-delimited text,
char for scripts without word boundaries) and everything downstream works
on token sequences, never raw strings.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
SEP_TOKEN = "<sep>"
UNK_TOKEN = "<unk>"
SPECIAL_TOKENS = (BOS_TOKEN, EOS_TOKEN, SEP_TOKEN, UNK_TOKEN)

SPLITS = ("train", "validation", "test")
TOKENIZE_MODES = ("whitespace", "char")


class CorpusFormatError(ValueError):
    """Raised for malformed corpus files; message names the offending line."""


def tokenize(text: str, mode: str = "whitespace") -> list[str]:
    """Split text into tokens.

    whitespace: split on runs of whitespace. char: one token per Unicode
    character, whitespace skipped. Empty text gives an empty list.
    """
    if mode == "whitespace":
        return text.split()
    if mode == "char":
        return [ch for ch in text if not ch.isspace()]
    raise ValueError(f"unknown tokenize mode: {mode!r}")


@dataclass(frozen=True)
class Utterance:
    tokens: tuple[str, ...]
    raw: str

    def __post_init__(self):
        if any(t == "" for t in self.tokens):
            raise ValueError("utterance contains an empty token")

    @classmethod
    def from_text(cls, text: str, mode: str = "whitespace") -> "Utterance":
        return cls(tokens=tuple(tokenize(text, mode)), raw=text)


@dataclass(frozen=True)
class DialoguePair:
    id: str
    post: Utterance
    response: Utterance


@dataclass(frozen=True)
class Corpus:
    pairs: tuple[DialoguePair, ...]
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split: {self.split!r}")
        seen = set()
        for p in self.pairs:
            if p.id in seen:
                raise ValueError(f"duplicate pair id: {p.id!r}")
            seen.add(p.id)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def utterances(self):
        for p in self.pairs:
            yield p.post
            yield p.response


def _make_pair(pair_id: str, post_text: str, response_text: str, mode: str,
               lineno: int) -> DialoguePair:
    post = Utterance.from_text(post_text, mode)
    response = Utterance.from_text(response_text, mode)
    if not post.tokens:
        raise CorpusFormatError(f"line {lineno}: empty post")
    if not response.tokens:
        raise CorpusFormatError(f"line {lineno}: empty response")
    return DialoguePair(id=pair_id, post=post, response=response)


def load_pairs(path, format: str = "jsonl", mode: str = "whitespace",
               split: str = "train") -> Corpus:
    """Load dialogue pairs from a TSV or JSONL file.

    TSV: one pair per line, post TAB response, no header. JSONL: one object
    per line with fields post, response and optional id. Missing ids are
    assigned from the record index. A train split must be non-empty.
    """
    if format not in ("tsv", "jsonl"):
        raise ValueError(f"unknown corpus format: {format!r}")
    pairs: list[DialoguePair] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        record = 0
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if format == "tsv":
                fields = line.split("\t")
                if len(fields) != 2:
                    raise CorpusFormatError(
                        f"line {lineno}: expected 2 tab-separated fields, got {len(fields)}")
                pair_id, post_text, response_text = str(record), fields[0], fields[1]
            else:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusFormatError(f"line {lineno}: invalid JSON: {exc}") from exc
                if not isinstance(obj, dict):
                    raise CorpusFormatError(f"line {lineno}: record is not an object")
                for key in ("post", "response"):
                    if key not in obj:
                        raise CorpusFormatError(f"line {lineno}: missing field {key!r}")
                pair_id = str(obj["id"]) if "id" in obj else str(record)
                post_text, response_text = str(obj["post"]), str(obj["response"])
            if pair_id in seen_ids:
                raise CorpusFormatError(f"line {lineno}: duplicate pair id {pair_id!r}")
            seen_ids.add(pair_id)
            pairs.append(_make_pair(pair_id, post_text, response_text, mode, lineno))
            record += 1
    if split == "train" and not pairs:
        raise CorpusFormatError(f"{path}: train split is empty")
    return Corpus(pairs=tuple(pairs), split=split)


@dataclass(frozen=True)
class Vocabulary:
    """Token/id bijection with four reserved specials at ids 0..3.

    Regular tokens get ids in descending corpus frequency, ties broken
    lexicographically. Tokens outside the vocabulary encode to the UNK id.
    """
    token_of: tuple[str, ...]
    id_of: dict = field(repr=False)
    bos: int = 0
    eos: int = 1
    sep: int = 2
    unk: int = 3

    @property
    def specials(self) -> tuple[int, int, int, int]:
        return (self.bos, self.eos, self.sep, self.unk)

    def __len__(self) -> int:
        return len(self.token_of)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    def encode(self, tokens) -> list[int]:
        unk = self.unk
        return [self.id_of.get(t, unk) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.token_of[i] for i in ids]

    def to_json(self) -> dict:
        return {"tokens": list(self.token_of), "bos": self.bos, "eos": self.eos,
                "sep": self.sep, "unk": self.unk}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        tokens = tuple(obj["tokens"])
        return cls(token_of=tokens, id_of={t: i for i, t in enumerate(tokens)},
                   bos=int(obj["bos"]), eos=int(obj["eos"]),
                   sep=int(obj["sep"]), unk=int(obj["unk"]))

    @classmethod
    def from_tokens(cls, tokens) -> "Vocabulary":
        """Build from an ordered token list that already places the specials."""
        tokens = tuple(tokens)
        id_of = {t: i for i, t in enumerate(tokens)}
        return cls(token_of=tokens, id_of=id_of,
                   bos=id_of[BOS_TOKEN], eos=id_of[EOS_TOKEN],
                   sep=id_of[SEP_TOKEN], unk=id_of[UNK_TOKEN])


def build_vocab(corpus: Corpus, min_count: int = 1) -> Vocabulary:
    """Vocabulary over all corpus tokens with frequency >= min_count.

    Sub-threshold tokens are left out and will encode to UNK at model time;
    metrics keep seeing surface tokens because utterances are never rewritten.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    for utt in corpus.utterances():
        counts.update(utt.tokens)
    kept = sorted((t for t, c in counts.items()
                   if c >= min_count and t not in SPECIAL_TOKENS),
                  key=lambda t: (-counts[t], t))
    return Vocabulary.from_tokens(SPECIAL_TOKENS + tuple(kept))
