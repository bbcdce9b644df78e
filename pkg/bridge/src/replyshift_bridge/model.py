"""Small GRU language model trained on serialized dialogue streams.

The bridge owns its vocabulary (negotiated at handshake) and serves
normalized log-probability vectors for arbitrary id contexts. Streams
follow the layout post SEP perspective BOS response EOS with an extra EOS
priming token at the front so the empty context is well defined; the
perspective slot is filled with the response's opening token, a crude but
serviceable proxy when no shift graph is available at training time.

No pretrained checkpoint is downloaded: the model is trained from the
given corpus at startup under a fixed seed (epochs=0 keeps the seeded
random initialization, which is already protocol-conformant).
"""

from __future__ import annotations

import json
import sys
from collections import Counter

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
SEP_TOKEN = "<sep>"
UNK_TOKEN = "<unk>"
SPECIALS = (BOS_TOKEN, EOS_TOKEN, SEP_TOKEN, UNK_TOKEN)


def log(msg: str) -> None:
    print(f"[bridge] {msg}", file=sys.stderr, flush=True)


def tokenize(text: str, mode: str) -> list[str]:
    if mode == "whitespace":
        return text.split()
    if mode == "char":
        return [ch for ch in text if not ch.isspace()]
    raise ValueError(f"unknown tokenizer mode: {mode!r}")


def load_corpus(path, fmt: str, mode: str) -> list[tuple[list[str], list[str]]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if fmt == "tsv":
                fields = line.split("\t")
                if len(fields) != 2:
                    raise ValueError(f"line {lineno}: expected 2 fields")
                post, response = fields
            else:
                obj = json.loads(line)
                post, response = str(obj["post"]), str(obj["response"])
            post_t, resp_t = tokenize(post, mode), tokenize(response, mode)
            if post_t and resp_t:
                pairs.append((post_t, resp_t))
    if not pairs:
        raise ValueError(f"{path}: no usable pairs")
    return pairs


class BridgeVocab:
    def __init__(self, tokens: list[str]):
        self.tokens = list(tokens)
        self.id_of = {t: i for i, t in enumerate(self.tokens)}
        self.bos = self.id_of[BOS_TOKEN]
        self.eos = self.id_of[EOS_TOKEN]
        self.sep = self.id_of[SEP_TOKEN]
        self.unk = self.id_of[UNK_TOKEN]

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, toks) -> list[int]:
        return [self.id_of.get(t, self.unk) for t in toks]

    @classmethod
    def from_pairs(cls, pairs, min_count: int = 1) -> "BridgeVocab":
        counts = Counter()
        for post, resp in pairs:
            counts.update(post)
            counts.update(resp)
        kept = sorted((t for t, c in counts.items()
                       if c >= min_count and t not in SPECIALS),
                      key=lambda t: (-counts[t], t))
        return cls(list(SPECIALS) + kept)


class GruLm(nn.Module):
    def __init__(self, vocab_size: int, emb_dim: int = 64, hidden: int = 128):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, emb_dim)
        self.gru = nn.GRU(emb_dim, hidden, batch_first=True)
        self.out = nn.Linear(hidden, vocab_size)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        h, _ = self.gru(self.embed(ids))
        return self.out(h)


class BridgeModel:
    """Trained model plus the id-level scoring entry points."""

    def __init__(self, vocab: BridgeVocab, net: GruLm, max_ctx: int = 256):
        self.vocab = vocab
        self.net = net.eval()
        self.max_ctx = max_ctx

    def _prime(self, ctx_ids) -> list[int]:
        # EOS primes the stream so the empty context is scorable; over-long
        # contexts are truncated from the left (the cap is in the handshake)
        ctx = [int(i) for i in ctx_ids][-self.max_ctx:]
        return [self.vocab.eos] + ctx

    @torch.no_grad()
    def logprobs(self, ctx_ids) -> np.ndarray:
        ids = torch.tensor([self._prime(ctx_ids)], dtype=torch.long)
        logits = self.net(ids)[0, -1]
        return F.log_softmax(logits, dim=-1).double().numpy()

    @torch.no_grad()
    def sequence_score(self, ctx_ids, target_ids, include_eos: bool = True) -> float:
        target = [int(i) for i in target_ids]
        if include_eos:
            target = target + [self.vocab.eos]
        ids = torch.tensor([self._prime(list(ctx_ids) + target)], dtype=torch.long)
        logits = self.net(ids)[0]
        lp = F.log_softmax(logits, dim=-1)
        total = 0.0
        offset = ids.shape[1] - len(target) - 1
        for j, tok in enumerate(target):
            total += float(lp[offset + j, tok])
        return total

    def choose_perspective(self, x_ids, c_ids, cands_ids) -> int:
        """Greedy pick: the candidate whose tokens (plus the BOS transition)
        are most likely to fill the perspective slot after post SEP."""
        del c_ids  # accepted for protocol parity; this scorer conditions on x
        prefix = list(x_ids) + [self.vocab.sep]
        best_idx, best_score = 0, -float("inf")
        for idx, cand in enumerate(cands_ids):
            score = self.sequence_score(prefix, list(cand) + [self.vocab.bos],
                                        include_eos=False)
            if score > best_score:
                best_idx, best_score = idx, score
        return best_idx


def build_streams(pairs, vocab: BridgeVocab) -> list[list[int]]:
    streams = []
    for post, resp in pairs:
        x = vocab.encode(post)
        y = vocab.encode(resp)
        z = [y[0]]  # opening response token stands in for the perspective
        streams.append([vocab.eos] + x + [vocab.sep] + z + [vocab.bos] + y
                       + [vocab.eos])
    return streams


def train_model(pairs, seed: int = 0, epochs: int = 3, emb_dim: int = 64,
                hidden: int = 128, batch_size: int = 64, lr: float = 5e-3,
                max_ctx: int = 256, min_count: int = 1) -> BridgeModel:
    torch.manual_seed(seed)
    vocab = BridgeVocab.from_pairs(pairs, min_count=min_count)
    net = GruLm(len(vocab), emb_dim, hidden)
    streams = build_streams(pairs, vocab)
    if epochs > 0:
        rng = np.random.default_rng(seed)
        optim = torch.optim.Adam(net.parameters(), lr=lr)
        net.train()
        for epoch in range(epochs):
            order = rng.permutation(len(streams))
            total, steps = 0.0, 0
            for start in range(0, len(order), batch_size):
                batch = [streams[i] for i in order[start:start + batch_size]]
                width = max(len(s) for s in batch)
                ids = torch.full((len(batch), width), vocab.eos, dtype=torch.long)
                mask = torch.zeros((len(batch), width), dtype=torch.bool)
                for r, s in enumerate(batch):
                    ids[r, :len(s)] = torch.tensor(s)
                    mask[r, 1:len(s)] = True
                logits = net(ids[:, :-1])
                loss = F.cross_entropy(
                    logits.reshape(-1, len(vocab))[mask[:, 1:].reshape(-1)],
                    ids[:, 1:].reshape(-1)[mask[:, 1:].reshape(-1)])
                optim.zero_grad()
                loss.backward()
                optim.step()
                total += loss.item()
                steps += 1
            log(f"epoch {epoch + 1}/{epochs}: loss {total / steps:.3f}")
    return BridgeModel(vocab, net, max_ctx=max_ctx)
