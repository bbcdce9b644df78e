"""Wire-protocol client: newline-delimited JSON to an external model server.

The server may be a spawned subprocess (requests on stdin, replies on
stdout) or a TCP endpoint. Requests are single-line JSON objects:

    {"op": "handshake"}
        -> {"vocab": [tokens...], "bos": id, "eos": id, "sep": id, "unk": id}
    {"op": "logprobs", "ctx": [ids...]}
        -> {"lp": [floats...]}       length |V|, log-sum-exp within 1e-3
    {"op": "perspective", "x": [ids...], "c": [ids...], "cands": [[ids...]...]}
        -> {"choice": index}

An {"error": message} reply aborts only the current request. The client
renormalizes logprob vectors and records the worst drift it has seen.
"""

from __future__ import annotations

import json
import queue
import shlex
import socket
import subprocess
import threading

import numpy as np

from .corpus import Vocabulary
from .seqmodel import CategoricalDistribution, log_sum_exp

NORMALIZATION_TOL = 1e-3


class WireError(Exception):
    """Protocol violation from the remote side."""


class WireTransportError(WireError):
    """Transport failure (broken pipe, closed socket); retriable."""


class WireRequestError(WireError):
    """The server answered {"error": ...} for one request."""


class _StdioTransport:
    def __init__(self, argv: list[str]):
        self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE,
                                     stdout=subprocess.PIPE, text=True,
                                     encoding="utf-8", bufsize=1)

    def send(self, line: str) -> None:
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise WireTransportError(f"server process closed stdin: {exc}") from exc

    def recv(self) -> str:
        line = self.proc.stdout.readline()
        if not line:
            raise WireTransportError("server process closed stdout")
        return line

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class _TcpTransport:
    def __init__(self, host: str, port: int):
        self.sock = socket.create_connection((host, port))
        self.reader = self.sock.makefile("r", encoding="utf-8")
        self.writer = self.sock.makefile("w", encoding="utf-8")

    def send(self, line: str) -> None:
        try:
            self.writer.write(line + "\n")
            self.writer.flush()
        except OSError as exc:
            raise WireTransportError(f"socket write failed: {exc}") from exc

    def recv(self) -> str:
        line = self.reader.readline()
        if not line:
            raise WireTransportError("server closed the connection")
        return line

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class WireConnection:
    """One connection; request/response pairs are serialized with a lock."""

    def __init__(self, transport):
        self.transport = transport
        self.lock = threading.Lock()
        self.handshake = self.request({"op": "handshake"})

    def request(self, obj: dict) -> dict:
        with self.lock:
            self.transport.send(json.dumps(obj, ensure_ascii=False))
            line = self.transport.recv()
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise WireError(f"unparseable reply: {line!r}") from exc
        if not isinstance(reply, dict):
            raise WireError(f"reply is not an object: {reply!r}")
        if "error" in reply:
            raise WireRequestError(str(reply["error"]))
        return reply

    def close(self) -> None:
        self.transport.close()


def open_connection(spec: str) -> WireConnection:
    """spec: `cmd:<shell command>` to spawn a stdio server, or
    `tcp:<host>:<port>` to connect to a listening one."""
    if spec.startswith("cmd:"):
        return WireConnection(_StdioTransport(shlex.split(spec[len("cmd:"):])))
    if spec.startswith("tcp:"):
        host, port = spec[len("tcp:"):].rsplit(":", 1)
        return WireConnection(_TcpTransport(host, int(port)))
    raise ValueError(f"unknown wire spec: {spec!r}")


def _vocab_from_handshake(reply: dict) -> Vocabulary:
    for key in ("vocab", "bos", "eos", "sep", "unk"):
        if key not in reply:
            raise WireError(f"handshake missing field {key!r}")
    tokens = tuple(str(t) for t in reply["vocab"])
    ids = {}
    for name in ("bos", "eos", "sep", "unk"):
        i = int(reply[name])
        if not (0 <= i < len(tokens)):
            raise WireError(f"handshake {name} id out of range: {i}")
        ids[name] = i
    if len(set(ids.values())) != 4:
        raise WireError("handshake special ids are not pairwise distinct")
    return Vocabulary(token_of=tokens, id_of={t: i for i, t in enumerate(tokens)},
                      bos=ids["bos"], eos=ids["eos"], sep=ids["sep"], unk=ids["unk"])


class WireModel:
    """Sequence-model backend served over the wire protocol.

    Shares the handshake-negotiated vocabulary across a pool of
    connections; requests borrow a free connection from the pool.
    """

    def __init__(self, spec: str, pool_size: int = 1):
        if pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        self.spec = spec
        self._pool: queue.Queue = queue.Queue()
        self._conns = []
        first = open_connection(spec)
        self.vocab = _vocab_from_handshake(first.handshake)
        self.max_ctx = first.handshake.get("max_ctx")
        self._conns.append(first)
        self._pool.put(first)
        for _ in range(pool_size - 1):
            conn = open_connection(spec)
            if _vocab_from_handshake(conn.handshake).token_of != self.vocab.token_of:
                raise WireError("pool connections disagree on the vocabulary")
            self._conns.append(conn)
            self._pool.put(conn)
        self.max_drift = 0.0

    def _request(self, obj: dict) -> dict:
        conn = self._pool.get()
        try:
            return conn.request(obj)
        finally:
            self._pool.put(conn)

    def next_logprobs(self, context_ids) -> CategoricalDistribution:
        reply = self._request({"op": "logprobs", "ctx": [int(i) for i in context_ids]})
        if "lp" not in reply:
            raise WireError("logprobs reply missing 'lp'")
        lp = np.array([float(x) for x in reply["lp"]], dtype=float)
        if lp.shape[0] != len(self.vocab):
            raise WireError(f"logprobs length {lp.shape[0]} != |V| {len(self.vocab)}")
        drift = log_sum_exp(lp)
        if abs(drift) > NORMALIZATION_TOL:
            raise WireError(f"logprobs drift {drift} exceeds {NORMALIZATION_TOL}")
        if abs(drift) > abs(self.max_drift):
            self.max_drift = drift
        dist = CategoricalDistribution(logprobs=lp - drift)
        dist.validate()
        return dist

    def perspective(self, x_ids, c_ids, cands_ids: list[list[int]]) -> int:
        reply = self._request({"op": "perspective",
                               "x": [int(i) for i in x_ids],
                               "c": [int(i) for i in c_ids],
                               "cands": [[int(i) for i in c] for c in cands_ids]})
        if "choice" not in reply:
            raise WireError("perspective reply missing 'choice'")
        choice = int(reply["choice"])
        if not (0 <= choice < len(cands_ids)):
            raise WireError(f"perspective choice {choice} outside 0..{len(cands_ids) - 1}")
        return choice

    def close(self) -> None:
        for conn in self._conns:
            conn.close()


class WirePerspectivePredictor:
    """Perspective predictor delegating to a wire backend."""

    def __init__(self, model: WireModel):
        self.model = model

    def choose(self, post_tokens, focus: str, subset: list[str]) -> str:
        vocab = self.model.vocab
        idx = self.model.perspective(vocab.encode(post_tokens),
                                     vocab.encode([focus]),
                                     [vocab.encode([z]) for z in subset])
        return subset[idx]


def run_conformance(spec: str, contexts: int = 5, seed: int = 0) -> dict:
    """Protocol conformance checks against a live server.

    Covers handshake schema, logprob vector shape and normalization,
    determinism for repeated contexts, in-bounds perspective choices and
    recovery after a malformed request. Returns {check name: ok}; raises
    nothing on failures, so callers can report all at once.
    """
    results = {}
    conn = open_connection(spec)
    try:
        try:
            vocab = _vocab_from_handshake(conn.handshake)
            results["handshake_schema"] = True
        except WireError:
            results["handshake_schema"] = False
            return results
        v = len(vocab)
        rng = np.random.default_rng(seed)
        regular = [i for i in range(v) if i not in vocab.specials] or [vocab.unk]

        ok_shape, ok_norm, ok_det = True, True, True
        for _ in range(contexts):
            n = int(rng.integers(0, 8))
            ctx = [int(rng.choice(regular)) for _ in range(n)] + [vocab.bos]
            replies = [conn.request({"op": "logprobs", "ctx": ctx}) for _ in range(2)]
            for reply in replies:
                lp = reply.get("lp")
                if not isinstance(lp, list) or len(lp) != v:
                    ok_shape = False
                    continue
                if abs(log_sum_exp(np.array(lp, dtype=float))) > NORMALIZATION_TOL:
                    ok_norm = False
            if replies[0].get("lp") != replies[1].get("lp"):
                ok_det = False
        results["logprobs_shape"] = ok_shape
        results["logprobs_normalized"] = ok_norm
        results["logprobs_deterministic"] = ok_det

        cands = [[int(rng.choice(regular))] for _ in range(4)]
        reply = conn.request({"op": "perspective", "x": [int(regular[0])],
                              "c": [int(regular[0])], "cands": cands})
        choice = reply.get("choice")
        results["perspective_in_bounds"] = isinstance(choice, int) and 0 <= choice < len(cands)

        try:
            conn.request({"op": "no-such-op"})
            results["error_reply"] = False
        except WireRequestError:
            results["error_reply"] = True
        reply = conn.request({"op": "logprobs", "ctx": [vocab.bos]})
        results["recovers_after_error"] = isinstance(reply.get("lp"), list)
    finally:
        conn.close()
    return results
