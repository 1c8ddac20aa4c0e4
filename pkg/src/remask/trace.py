"""Run traces: an ordered event log sufficient to replay and audit a run.

Serialization is newline-delimited JSON, one event per line, with a ``kind``
discriminator. Step indices are 1-based. The exact field names are part of
the external interface and covered by a golden-file test; see
docs/protocol.md.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .errors import PreconditionError
from .state import SeqState, Vocab, new_state


@dataclass(frozen=True)
class ModelPass:
    """One full model forward pass; the unit of NFE accounting."""

    step: int
    purpose: str  # "base" | "revision"


@dataclass(frozen=True)
class Unmask:
    """Tokens committed to previously-masked positions.

    ``probs`` records the probability each committed token received at this
    step, which is the cached-confidence value used by confidence-driven
    revision.
    """

    step: int
    positions: tuple[int, ...]
    tokens: tuple[int, ...]
    probs: tuple[float, ...]


@dataclass(frozen=True)
class ReviseProbe:
    """Instability measurement over a candidate subset under its perturbed
    context."""

    step: int
    candidates: tuple[int, ...]
    instability: tuple[float, ...]


@dataclass(frozen=True)
class ReviseApply:
    """Direct rewrite of committed positions (old == new is a logged no-op)."""

    step: int
    positions: tuple[int, ...]
    old_tokens: tuple[int, ...]
    new_tokens: tuple[int, ...]


@dataclass(frozen=True)
class RemaskApply:
    """Committed positions reset to MASK (confidence-cache style revision)."""

    step: int
    positions: tuple[int, ...]


Event = Union[ModelPass, Unmask, ReviseProbe, ReviseApply, RemaskApply]

_KINDS = {
    ModelPass: "model_pass",
    Unmask: "unmask",
    ReviseProbe: "revise_probe",
    ReviseApply: "revise_apply",
    RemaskApply: "remask",
}
_BY_KIND = {v: k for k, v in _KINDS.items()}


def event_to_dict(ev: Event) -> dict:
    d = {"kind": _KINDS[type(ev)], "step": ev.step}
    if isinstance(ev, ModelPass):
        d["purpose"] = ev.purpose
    elif isinstance(ev, Unmask):
        d["positions"] = list(ev.positions)
        d["tokens"] = list(ev.tokens)
        d["probs"] = list(ev.probs)
    elif isinstance(ev, ReviseProbe):
        d["candidates"] = list(ev.candidates)
        d["instability"] = list(ev.instability)
    elif isinstance(ev, ReviseApply):
        d["positions"] = list(ev.positions)
        d["old_tokens"] = list(ev.old_tokens)
        d["new_tokens"] = list(ev.new_tokens)
    elif isinstance(ev, RemaskApply):
        d["positions"] = list(ev.positions)
    return d


def event_from_dict(d: dict) -> Event:
    kind = d["kind"]
    cls = _BY_KIND[kind]
    if cls is ModelPass:
        return ModelPass(step=d["step"], purpose=d["purpose"])
    if cls is Unmask:
        return Unmask(
            step=d["step"],
            positions=tuple(d["positions"]),
            tokens=tuple(d["tokens"]),
            probs=tuple(d["probs"]),
        )
    if cls is ReviseProbe:
        return ReviseProbe(
            step=d["step"],
            candidates=tuple(d["candidates"]),
            instability=tuple(d["instability"]),
        )
    if cls is ReviseApply:
        return ReviseApply(
            step=d["step"],
            positions=tuple(d["positions"]),
            old_tokens=tuple(d["old_tokens"]),
            new_tokens=tuple(d["new_tokens"]),
        )
    return RemaskApply(step=d["step"], positions=tuple(d["positions"]))


class RunTrace:
    """Append-only event log for a single run."""

    def __init__(self, events: Iterable[Event] = ()):
        self.events: list[Event] = list(events)

    def append(self, ev: Event) -> None:
        self.events.append(ev)

    def nfe(self) -> int:
        return sum(1 for ev in self.events if isinstance(ev, ModelPass))

    def passes(self, purpose: str) -> int:
        return sum(
            1
            for ev in self.events
            if isinstance(ev, ModelPass) and ev.purpose == purpose
        )

    def revision_pass_steps(self) -> tuple[int, ...]:
        return tuple(
            ev.step
            for ev in self.events
            if isinstance(ev, ModelPass) and ev.purpose == "revision"
        )

    def unmask_position_count(self) -> int:
        return sum(
            len(ev.positions) for ev in self.events if isinstance(ev, Unmask)
        )

    def remask_position_count(self) -> int:
        return sum(
            len(ev.positions) for ev in self.events if isinstance(ev, RemaskApply)
        )

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(event_to_dict(ev), separators=(",", ":"))
            for ev in self.events
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str) -> "RunTrace":
        events = [
            event_from_dict(json.loads(line))
            for line in text.splitlines()
            if line.strip()
        ]
        return cls(events)

    def replay(self, vocab: Vocab, prompt: Sequence[int], L: int) -> SeqState:
        """Reconstruct the final state by applying state-changing events.

        Unmask and RemaskApply are checked against the precondition that
        their positions were masked (resp. unmasked) immediately before.
        """
        state = new_state(vocab, prompt, L)
        mask = vocab.mask_id
        for ev in self.events:
            if isinstance(ev, Unmask):
                for pos in ev.positions:
                    if state.response[pos] != mask:
                        raise PreconditionError(
                            f"replay: unmask at already-committed position {pos}"
                        )
                state = state.with_tokens(ev.positions, ev.tokens)
            elif isinstance(ev, ReviseApply):
                for pos, old in zip(ev.positions, ev.old_tokens):
                    if state.response[pos] != old:
                        raise PreconditionError(
                            f"replay: revise old token mismatch at {pos}"
                        )
                state = state.with_tokens(ev.positions, ev.new_tokens)
            elif isinstance(ev, RemaskApply):
                for pos in ev.positions:
                    if state.response[pos] == mask:
                        raise PreconditionError(
                            f"replay: remask at already-masked position {pos}"
                        )
                resp = list(state.response)
                for pos in ev.positions:
                    resp[pos] = mask
                state = SeqState(
                    vocab=state.vocab,
                    prompt=state.prompt,
                    response=tuple(resp),
                    step=state.step,
                )
        return state
