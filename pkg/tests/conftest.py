import sys
from pathlib import Path

import pytest

from replyshift.corpus import Corpus, DialoguePair, Utterance

REPO_ROOT = Path(__file__).resolve().parent.parent
TOY_DIR = REPO_ROOT / "data" / "toy"


def utt(text: str) -> Utterance:
    return Utterance.from_text(text)


def pair(pid: str, post: str, response: str) -> DialoguePair:
    return DialoguePair(id=pid, post=utt(post), response=utt(response))


def corpus_of(*posts_responses, split="train") -> Corpus:
    pairs = tuple(pair(str(i), p, r) for i, (p, r) in enumerate(posts_responses))
    return Corpus(pairs=pairs, split=split)


@pytest.fixture(scope="session")
def toy_dir() -> Path:
    assert TOY_DIR.exists(), "bundled toy corpus missing; run python -m replyshift.toydata data/toy"
    return TOY_DIR


@pytest.fixture(scope="session")
def python_exe() -> str:
    return sys.executable
