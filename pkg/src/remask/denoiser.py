"""Conditional-distribution providers.

Three backends share one contract: given a state and a set of masked
response positions, return one per-position categorical distribution per
request, at the cost of exactly one model forward pass (one NFE) per call.

* ``TabularJointModel``: exact joint over all |V|^L responses; conditionals
  are computed by explicit marginalization and serve as ground truth.
* ``NGramBackend``: cheap bigram-potential toy model for plumbing and
  throughput tests only; not coherent with any joint.
* ``RemoteBackend``: newline-delimited-JSON protocol client (TCP or a
  spawned stdio process); see docs/protocol.md.
"""

from __future__ import annotations

import json
import socket
import subprocess
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateConditional,
    PreconditionError,
    TransportError,
)
from .state import SeqState, Vocab
from .trace import ModelPass, RunTrace

# Probabilities are floored before taking logs so instability scores stay
# finite; ranking only needs order, which the floor preserves above it.
PROB_FLOOR = 1e-12

TABULAR_MAX_L = 10
TABULAR_MAX_V = 8


@dataclass(frozen=True)
class Categorical:
    """Per-position distribution over the vocabulary, natural-log domain."""

    logp: np.ndarray

    def __post_init__(self):
        lp = np.asarray(self.logp, dtype=np.float64)
        object.__setattr__(self, "logp", lp)
        if not np.all(np.isfinite(lp)):
            raise ConfigError("Categorical log-probs must be finite")
        total = _logsumexp(lp)
        if abs(total) > 1e-9:
            raise ConfigError(f"Categorical not normalized: logsumexp={total}")

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "Categorical":
        p = np.asarray(probs, dtype=np.float64)
        total = p.sum()
        if total <= 0:
            raise DegenerateConditional("probability vector has zero mass")
        p = p / total
        return cls(logp=np.log(np.maximum(p, PROB_FLOOR)))

    def probs(self) -> np.ndarray:
        return np.exp(self.logp)

    def argmax(self) -> int:
        # np.argmax returns the lowest index on ties, matching the
        # lowest-token-id tie-break rule.
        return int(np.argmax(self.logp))

    def top2_margin(self) -> float:
        p = np.sort(self.probs())[::-1]
        if p.size < 2:
            return float(p[0])
        return float(p[0] - p[1])


def _logsumexp(lp: np.ndarray) -> float:
    mx = np.max(lp)
    return float(mx + np.log(np.sum(np.exp(lp - mx))))


class DenoiserBackend:
    """Abstract provider of per-position conditionals for masked slots."""

    vocab: Vocab

    def distributions(
        self, state: SeqState, positions: Sequence[int]
    ) -> dict[int, Categorical]:
        raise NotImplementedError

    def close(self) -> None:
        pass


def predict(
    backend: DenoiserBackend,
    state: SeqState,
    positions: Sequence[int],
    trace: Optional[RunTrace] = None,
    purpose: str = "base",
) -> dict[int, Categorical]:
    """Query ``backend`` for distributions at masked response positions.

    Counts as exactly one ModelPass on ``trace`` regardless of how many
    positions are requested (including none); this is what makes NFE
    accounting auditable from the trace alone.
    """
    mask = state.vocab.mask_id
    pos = list(positions)
    for p in pos:
        if not (0 <= p < state.length):
            raise PreconditionError(f"position {p} outside response")
        if state.response[p] != mask:
            raise PreconditionError(f"position {p} is not masked")
    out = backend.distributions(state, pos)
    if set(out) != set(pos):
        raise PreconditionError("backend returned wrong position set")
    if trace is not None:
        trace.append(ModelPass(step=state.step, purpose=purpose))
    return out


class TabularJointModel(DenoiserBackend):
    """Exact joint probability table over all |V|^L response sequences.

    Size caps keep full enumeration tractable; conditionals are computed by
    slicing the joint on committed slots and summing out the rest.
    """

    def __init__(self, vocab: Vocab, joint: np.ndarray, prompt: Sequence[int] = ()):
        joint = np.asarray(joint, dtype=np.float64)
        L = joint.ndim
        if L > TABULAR_MAX_L:
            raise ConfigError(f"tabular joint limited to L <= {TABULAR_MAX_L}")
        if vocab.size > TABULAR_MAX_V:
            raise ConfigError(f"tabular joint limited to |V| <= {TABULAR_MAX_V}")
        if joint.shape != (vocab.size,) * L:
            raise ConfigError(
                f"joint shape {joint.shape} != {(vocab.size,) * L}"
            )
        if np.any(joint < 0):
            raise ConfigError("joint entries must be non-negative")
        total = joint.sum()
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"joint must sum to 1, got {total}")
        self.vocab = vocab
        self.joint = joint
        self.prompt = tuple(prompt)
        self.L = L

    def conditional(self, state: SeqState, i: int) -> Categorical:
        """p(v at i | committed slots), position i must be masked."""
        mask = self.vocab.mask_id
        if state.length != self.L:
            raise PreconditionError("state length does not match joint")
        if state.response[i] != mask:
            raise PreconditionError(f"position {i} is not masked")
        index = tuple(
            slice(None) if tok == mask else tok for tok in state.response
        )
        sub = self.joint[index]
        # Axes of ``sub`` correspond to masked positions in increasing order.
        masked = [p for p, tok in enumerate(state.response) if tok == mask]
        axis = masked.index(i)
        other = tuple(a for a in range(sub.ndim) if a != axis)
        marg = sub.sum(axis=other) if other else sub
        if marg.sum() <= 0:
            raise DegenerateConditional(
                f"state has zero mass under the joint (position {i})"
            )
        return Categorical.from_probs(marg)

    def distributions(self, state, positions):
        return {i: self.conditional(state, i) for i in positions}

    def sequence_prob(self, response: Sequence[int]) -> float:
        return float(self.joint[tuple(response)])

    def log_likelihood(self, response: Sequence[int]) -> float:
        return float(np.log(max(self.sequence_prob(response), PROB_FLOOR)))


def tabular_conditional(
    model: TabularJointModel, state: SeqState, i: int
) -> Categorical:
    """Module-level alias for the exact conditional query."""
    return model.conditional(state, i)


class NGramBackend(DenoiserBackend):
    """Bigram-potential toy model.

    A position's distribution is the normalized product of a unigram weight
    with left/right bigram potentials; MASK (or absent) neighbors contribute
    a uniform factor. The last prompt token acts as the left neighbor of
    response slot 0. Deterministic given its weights; excluded from
    correctness acceptance.
    """

    def __init__(self, vocab: Vocab, unigram: np.ndarray, bigram: np.ndarray):
        unigram = np.asarray(unigram, dtype=np.float64)
        bigram = np.asarray(bigram, dtype=np.float64)
        V = vocab.size
        if unigram.shape != (V,) or bigram.shape != (V, V):
            raise ConfigError("ngram weight shapes must be (V,) and (V, V)")
        if np.any(unigram <= 0) or np.any(bigram <= 0):
            raise ConfigError("ngram potentials must be strictly positive")
        self.vocab = vocab
        self.unigram = unigram
        self.bigram = bigram

    def _neighbor(self, state: SeqState, i: int, delta: int) -> Optional[int]:
        j = i + delta
        if 0 <= j < state.length:
            tok = state.response[j]
        elif j == -1 and state.prompt:
            tok = state.prompt[-1]
        else:
            return None
        return None if tok == self.vocab.mask_id else tok

    def distribution_at(self, state: SeqState, i: int) -> Categorical:
        p = self.unigram.copy()
        left = self._neighbor(state, i, -1)
        right = self._neighbor(state, i, +1)
        if left is not None:
            p = p * self.bigram[left, :]
        if right is not None:
            p = p * self.bigram[:, right]
        return Categorical.from_probs(p)

    def distributions(self, state, positions):
        return {i: self.distribution_at(state, i) for i in positions}


def ngram_predict(
    model: NGramBackend,
    state: SeqState,
    positions: Sequence[int],
    trace: Optional[RunTrace] = None,
    purpose: str = "base",
) -> dict[int, Categorical]:
    return predict(model, state, positions, trace=trace, purpose=purpose)


class RemoteBackend(DenoiserBackend):
    """Protocol client for an external denoiser server.

    One in-flight request per connection; responses may arrive in any order
    and are correlated by id. Transport is either ``tcp:host:port`` or a
    stdio subprocess command line.
    """

    def __init__(
        self,
        vocab: Vocab,
        host: Optional[str] = None,
        port: Optional[int] = None,
        stdio_cmd: Optional[Sequence[str]] = None,
        timeout: float = 10.0,
    ):
        self.vocab = vocab
        self.timeout = timeout
        self._next_id = 1
        self._pending: dict[int, dict] = {}
        self._proc = None
        self._sock = None
        if stdio_cmd is not None:
            self._proc = subprocess.Popen(
                list(stdio_cmd),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
            self._write = self._proc.stdin.write
            self._flush = self._proc.stdin.flush
            self._readline = self._proc.stdout.readline
        elif host is not None and port is not None:
            self._sock = socket.create_connection((host, port), timeout=timeout)
            self._file = self._sock.makefile("rw", encoding="utf-8", newline="\n")
            self._write = self._file.write
            self._flush = self._file.flush
            self._readline = self._file.readline
        else:
            raise ConfigError("RemoteBackend needs host/port or stdio_cmd")

    def close(self):
        if self._sock is not None:
            try:
                self._file.close()
            finally:
                self._sock.close()
                self._sock = None
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)
            self._proc = None

    def _roundtrip(self, request: dict) -> dict:
        rid = request["id"]
        try:
            self._write(json.dumps(request, separators=(",", ":")) + "\n")
            self._flush()
            while True:
                if rid in self._pending:
                    return self._pending.pop(rid)
                line = self._readline()
                if not line:
                    raise TransportError("connection closed", request_id=rid)
                msg = json.loads(line)
                if msg.get("id") == rid:
                    return msg
                self._pending[msg.get("id")] = msg
        except (OSError, ValueError) as exc:
            raise TransportError(str(exc), request_id=rid) from exc

    def distributions(self, state, positions):
        mask = self.vocab.mask_id
        plen = len(state.prompt)
        tokens = list(state.full_tokens())
        maskvec = [tok == mask for tok in tokens]
        need = [plen + p for p in positions]
        rid = self._next_id
        self._next_id += 1
        msg = self._roundtrip(
            {"id": rid, "tokens": tokens, "mask": maskvec, "need": need}
        )
        if "error" in msg:
            raise TransportError(msg["error"], request_id=rid)
        logp: Mapping[str, list] = msg.get("logp", {})
        if sorted(int(k) for k in logp) != sorted(need):
            raise TransportError(
                "response position set mismatch", request_id=rid
            )
        out = {}
        for p in positions:
            vec = np.asarray(logp[str(plen + p)], dtype=np.float64)
            if vec.shape != (self.vocab.size,):
                raise TransportError(
                    f"bad log-prob vector length at position {p}", request_id=rid
                )
            out[p] = Categorical(logp=vec)
        return out
