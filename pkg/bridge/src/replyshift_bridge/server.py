"""Wire-protocol session: newline-delimited JSON over stdio or TCP.

Requests are handled one at a time; a malformed request produces an
{"error": ...} reply and the session keeps going. Log-probability floats
are written with 17 significant digits.
"""

from __future__ import annotations

import json
import socket
import sys

from .model import BridgeModel, log


def fmt_floats(values) -> str:
    # .16e always carries 17 significant digits; %g would strip the
    # trailing zeros of exactly-representable values
    return "[" + ",".join(format(float(v), ".16e") for v in values) + "]"


class BridgeSession:
    def __init__(self, model: BridgeModel):
        self.model = model

    def handshake_reply(self) -> str:
        v = self.model.vocab
        return json.dumps({"vocab": v.tokens, "bos": v.bos, "eos": v.eos,
                           "sep": v.sep, "unk": v.unk,
                           "max_ctx": self.model.max_ctx}, ensure_ascii=False)

    def handle_line(self, line: str) -> str:
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            return json.dumps({"error": "request is not valid JSON"})
        if not isinstance(req, dict) or "op" not in req:
            return json.dumps({"error": "request must be an object carrying 'op'"})
        op = req["op"]
        try:
            if op == "handshake":
                return self.handshake_reply()
            if op == "logprobs":
                ctx = self._ids(req, "ctx")
                return '{"lp":' + fmt_floats(self.model.logprobs(ctx)) + "}"
            if op == "perspective":
                cands = req.get("cands")
                if not isinstance(cands, list) or not cands:
                    raise ValueError("'cands' must be a non-empty list")
                choice = self.model.choose_perspective(
                    self._ids(req, "x"), self._ids(req, "c"),
                    [self._check_ids(c, "cands[i]") for c in cands])
                return json.dumps({"choice": int(choice)})
            if op == "score":
                lp = self.model.sequence_score(self._ids(req, "ctx"),
                                               self._ids(req, "target"))
                return json.dumps({"lp": float(lp)})
            raise ValueError(f"unknown op {op!r}")
        except (ValueError, KeyError, TypeError) as exc:
            return json.dumps({"error": str(exc)})

    def _ids(self, req: dict, key: str) -> list[int]:
        if key not in req:
            raise ValueError(f"missing field {key!r}")
        return self._check_ids(req[key], key)

    def _check_ids(self, value, name: str) -> list[int]:
        if not isinstance(value, list):
            raise ValueError(f"{name} must be a list of ids")
        v = len(self.model.vocab)
        ids = []
        for i in value:
            i = int(i)
            if not (0 <= i < v):
                raise ValueError(f"{name} id {i} outside vocabulary of size {v}")
            ids.append(i)
        return ids

    def serve_stream(self, rfile, wfile) -> None:
        for line in rfile:
            line = line.strip()
            if not line:
                continue
            wfile.write(self.handle_line(line) + "\n")
            wfile.flush()


def serve(model: BridgeModel, transport: str) -> None:
    """transport: `stdio`, or `tcp:<port>` (0 picks an ephemeral port,
    announced on stdout as `PORT <n>`)."""
    session = BridgeSession(model)
    if transport == "stdio":
        session.serve_stream(sys.stdin, sys.stdout)
        return
    if transport.startswith("tcp:"):
        port = int(transport[len("tcp:"):])
        srv = socket.create_server(("127.0.0.1", port))
        print(f"PORT {srv.getsockname()[1]}", flush=True)
        log(f"listening on 127.0.0.1:{srv.getsockname()[1]}")
        while True:
            conn, peer = srv.accept()
            log(f"connection from {peer}")
            with conn:
                rfile = conn.makefile("r", encoding="utf-8")
                wfile = conn.makefile("w", encoding="utf-8")
                try:
                    session.serve_stream(rfile, wfile)
                except (BrokenPipeError, ConnectionResetError):
                    pass
        return
    raise ValueError(f"unknown transport: {transport!r}")
