"""Newline-delimited JSON denoiser server.

Speaks the engine's wire protocol: one request object per line
(``{"id", "tokens", "mask", "need"}``), one response per request
(``{"id", "logp": {"<pos>": [...]}}`` or ``{"id", "error"}``), responses
correlated by id. The tabular conditional here is written from scratch
against the task-file format, so a round trip through the wire doubles as
an independent check of the engine's own marginalization.

Floats are serialized with 17 significant digits, which round-trips 64-bit
values exactly while keeping transcripts readable.
"""

from __future__ import annotations

import argparse
import json
import socketserver
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

PROB_FLOOR = 1e-12


class ProtocolError(Exception):
    """A request that violates the wire contract; reported, never fatal."""


@dataclass(frozen=True)
class ServerConfig:
    transport: str  # "stdio" | "tcp"
    task_path: str
    host: str = "127.0.0.1"
    port: int = 0


class TabularServerModel:
    """Exact conditionals from a task file's joint table.

    Independent of the engine package: reads the task JSON directly and
    marginalizes with its own numpy routine.
    """

    def __init__(self, task_path: str):
        doc = json.loads(Path(task_path).read_text())
        self.vocab_size = int(doc["vocab_size"])
        self.mask_id = self.vocab_size
        self.prompt = [int(t) for t in doc["prompt"]]
        self.L = int(doc["L"])
        if doc.get("joint") is None:
            raise ValueError("task file has no joint table to serve")
        self.joint = np.asarray(doc["joint"], dtype=np.float64).reshape(
            (self.vocab_size,) * self.L
        )

    def conditional(self, response: list[int], i: int) -> np.ndarray:
        """log p(y_i = v | committed slots), flooring zeros before the log."""
        index = tuple(
            slice(None) if tok == self.mask_id else tok for tok in response
        )
        sub = self.joint[index]
        masked_axes = [p for p in range(self.L) if response[p] == self.mask_id]
        target_axis = masked_axes.index(i)
        other = tuple(a for a in range(sub.ndim) if a != target_axis)
        vec = sub.sum(axis=other) if other else np.asarray(sub)
        total = vec.sum()
        if total <= 0:
            raise ProtocolError(f"conditioned state has zero probability mass")
        p = np.maximum(vec / total, PROB_FLOOR)
        return np.log(p)


def _float17(x: float) -> str:
    return format(float(x), ".17g")


def _render_response(rid: int, logp: dict[int, np.ndarray]) -> str:
    parts = []
    for pos in sorted(logp):
        vals = ",".join(_float17(v) for v in logp[pos])
        parts.append(f'"{pos}":[{vals}]')
    return f'{{"id":{int(rid)},"logp":{{{",".join(parts)}}}}}'


def _render_error(rid: int, message: str) -> str:
    return json.dumps({"id": int(rid), "error": message}, separators=(",", ":"))


def _validate(doc: dict, model: TabularServerModel) -> tuple[list[int], list[int]]:
    for key in ("id", "tokens", "mask", "need"):
        if key not in doc:
            raise ProtocolError(f"missing field {key!r}")
    tokens = [int(t) for t in doc["tokens"]]
    mask = [bool(b) for b in doc["mask"]]
    need = [int(p) for p in doc["need"]]
    plen = len(model.prompt)
    if len(tokens) != plen + model.L:
        raise ProtocolError(
            f"expected {plen + model.L} tokens, got {len(tokens)}"
        )
    if len(mask) != len(tokens):
        raise ProtocolError("mask length must match tokens")
    for i, (tok, is_masked) in enumerate(zip(tokens, mask)):
        if not 0 <= tok <= model.mask_id:
            raise ProtocolError(f"token {tok} at slot {i} outside vocabulary")
        if is_masked != (tok == model.mask_id):
            raise ProtocolError(
                f"mask[{i}] inconsistent with sentinel convention"
            )
    if tokens[:plen] != model.prompt:
        raise ProtocolError("prompt slots do not match the mounted task")
    for pos in need:
        if not plen <= pos < plen + model.L:
            raise ProtocolError(f"needed position {pos} outside the response")
        if not mask[pos]:
            raise ProtocolError(f"needed position {pos} is not masked")
    return tokens, need


def handle_line(line: str, model: TabularServerModel) -> str:
    """One request line in, one response line out; never raises."""
    try:
        doc = json.loads(line)
        if not isinstance(doc, dict):
            raise ValueError("request must be an object")
    except ValueError as exc:
        return _render_error(0, f"unparseable request: {exc}")
    rid = doc.get("id", 0)
    if not isinstance(rid, int):
        return _render_error(0, "request id must be an integer")
    try:
        tokens, need = _validate(doc, model)
        plen = len(model.prompt)
        response = tokens[plen:]
        logp = {pos: model.conditional(response, pos - plen) for pos in need}
        return _render_response(rid, logp)
    except ProtocolError as exc:
        return _render_error(rid, str(exc))


def _serve_stream(reader, writer, model: TabularServerModel) -> None:
    for line in reader:
        if not line.strip():
            continue
        writer.write(handle_line(line, model) + "\n")
        writer.flush()


def serve(config: ServerConfig) -> None:
    model = TabularServerModel(config.task_path)
    if config.transport == "stdio":
        _serve_stream(sys.stdin, sys.stdout, model)
        return
    if config.transport != "tcp":
        raise ValueError(f"unknown transport {config.transport!r}")

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            reader = (raw.decode("utf-8") for raw in self.rfile)

            class W:
                def write(_self, text):
                    self.wfile.write(text.encode("utf-8"))

                def flush(_self):
                    self.wfile.flush()

            _serve_stream(reader, W(), model)

    with socketserver.ThreadingTCPServer(
        (config.host, config.port), Handler
    ) as srv:
        host, port = srv.server_address[:2]
        print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
        srv.serve_forever()


def load_checkpoint_model(reference: str):
    """Extension point for mounting a real masked-LM checkpoint.

    The reference server only guarantees the tabular path; adapters for
    learned models should subclass TabularServerModel's interface
    (``conditional`` plus the vocab/prompt/L attributes) and construct it
    here.
    """
    raise NotImplementedError(
        f"no checkpoint adapter registered for {reference!r}"
    )


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="remask-bridge",
        description="Reference denoiser server for the remask wire protocol",
    )
    parser.add_argument("--transport", choices=["stdio", "tcp"], default="stdio")
    parser.add_argument("--task", required=True, help="task JSON file to mount")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=0)
    args = parser.parse_args(argv)
    serve(
        ServerConfig(
            transport=args.transport,
            task_path=args.task,
            host=args.host,
            port=args.port,
        )
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
