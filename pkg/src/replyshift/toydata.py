"""Synthetic dialogue corpus with planted focus/perspective regularities.

Every post names one topic word (the focus, always in final position) and
every response opens with one of that topic's eight perspective words, so
keyword extraction, shift-graph construction and the n-gram scorers all
have clean signal at desk scale. Template filler words ship as the
stoplist. Used as the bundled fixture for tests and the quickstart.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

TOPICS = [
    "garden", "music", "soccer", "coffee", "travel", "books",
    "cooking", "fitness", "movies", "painting", "cycling", "chess",
]

PERSPECTIVE_SUFFIXES = ["plan", "tip", "gear", "story", "habit", "club",
                        "budget", "routine", "lesson", "review", "crew", "deal"]

# every post ends with `about <focus>` so scorers see a stable pre-focus
# context; every response opens with the perspective followed by a tail
# that is fixed per suffix, keeping observed-pair perplexity tight
POST_TEMPLATES = [
    "tell me something about {c}",
    "what do you think about {c}",
    "i would love hearing about {c}",
    "lets talk for a minute about {c}",
    "my friend keeps asking about {c}",
    "i kept thinking all week about {c}",
]

RESPONSE_TAILS = {
    "plan": "is a solid idea overall",
    "tip": "might be worth trying soon",
    "gear": "works better than you expect",
    "story": "sounds good to me today",
    "habit": "could change things quite a bit",
    "club": "seems like the right call",
    "budget": "needs another look before deciding",
    "routine": "helps more than people admit",
    "lesson": "taught me more than expected",
    "review": "deserves a careful second look",
    "crew": "brings the best people together",
    "deal": "saves real money over time",
}


def perspectives_of(topic: str) -> list[str]:
    return [f"{topic}_{s}" for s in PERSPECTIVE_SUFFIXES]


def filler_words() -> list[str]:
    words = set()
    for tpl in POST_TEMPLATES:
        words.update(w for w in tpl.split() if w != "{c}")
    for tail in RESPONSE_TAILS.values():
        words.update(tail.split())
    return sorted(words)


def _make_pair(topic_idx: int, persp_idx: int, rng) -> tuple[str, str]:
    topic = TOPICS[topic_idx]
    suffix = PERSPECTIVE_SUFFIXES[persp_idx]
    persp = f"{topic}_{suffix}"
    post = POST_TEMPLATES[int(rng.integers(len(POST_TEMPLATES)))].format(c=topic)
    response = f"{persp} {RESPONSE_TAILS[suffix]}"
    return post, response


def make_split(n_pairs: int, seed: int, systematic: bool = False) -> list[dict]:
    """Random pairs; with systematic=True the leading pairs sweep every
    (topic, perspective) combination repeatedly so every graph vertex gets
    full neighbor coverage and near-uniform counts."""
    rng = np.random.default_rng(seed)
    combos = []
    if systematic:
        sweep = [(t, p) for t in range(len(TOPICS))
                 for p in range(len(PERSPECTIVE_SUFFIXES))]
        while len(combos) + len(sweep) <= n_pairs:
            combos.extend(sweep)
    while len(combos) < n_pairs:
        combos.append((int(rng.integers(len(TOPICS))),
                       int(rng.integers(len(PERSPECTIVE_SUFFIXES)))))
    records = []
    for i, (t, p) in enumerate(combos[:n_pairs]):
        post, response = _make_pair(t, p, rng)
        records.append({"id": str(i), "post": post, "response": response})
    return records


def default_config(data_dir: str = ".") -> dict:
    return {
        "config_version": 1,
        "paths": {
            "train": f"{data_dir}/train.jsonl",
            "validation": f"{data_dir}/valid.jsonl",
            "test": f"{data_dir}/test.jsonl",
            "stoplist": f"{data_dir}/stoplist.txt",
            "out_dir": "out",
        },
        "format": "jsonl",
        "tokenizer": "whitespace",
        "min_count": 1,
        "keywords": {"max_k": 5},
        "embedding": {"window": 5, "dim": 128, "seed": 0},
        "ngram": {"order": 4, "discount": 0.4},
        "augment": {"k_init": 20, "cand_min": 5, "cand_max": 100,
                    "temperature": 0.5, "max_len": 50,
                    "noise_scope": "per_pair", "drop_identical": True},
        "selection": {"m_per_post": 3, "eta": None},
        "backends": {"generator": "ngram", "forward": "ngram",
                     "backward": "ngram", "predictor": "builtin"},
        "master_seed": 7,
        "workers": 1,
    }


def generate(out_dir, seed: int = 7, n_train: int = 500, n_valid: int = 60,
             n_test: int = 60) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = {
        "train.jsonl": make_split(n_train, seed, systematic=True),
        "valid.jsonl": make_split(n_valid, seed + 1),
        "test.jsonl": make_split(n_test, seed + 2),
    }
    for name, records in splits.items():
        with open(out / name, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    with open(out / "stoplist.txt", "w", encoding="utf-8") as fh:
        for w in filler_words():
            fh.write(w + "\n")
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(default_config("."), fh, indent=2, sort_keys=True)
        fh.write("\n")


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description="generate the bundled toy corpus")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--train", type=int, default=500)
    ap.add_argument("--valid", type=int, default=60)
    ap.add_argument("--test", type=int, default=60)
    args = ap.parse_args(argv)
    generate(args.out_dir, seed=args.seed, n_train=args.train,
             n_valid=args.valid, n_test=args.test)
    print(f"wrote toy corpus to {args.out_dir}")


if __name__ == "__main__":
    main()
