"""Core value types: vocabulary, sequence states, and decode configuration.

All types here are immutable values. Every decoding step produces a fresh
``SeqState``; nothing mutates in place, which makes trace replay and oracle
cross-checks aliasing-free and safe to share across worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .errors import ConfigError, PreconditionError


@dataclass(frozen=True)
class Vocab:
    """Token vocabulary of ``size`` ids plus a reserved MASK sentinel.

    The MASK sentinel id equals ``size`` (one past the last real token), so
    probability vectors stay length ``size``: MASK is never a prediction
    target and never appears as a sampled output token.
    """

    size: int
    display: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError(f"vocab size must be >= 1, got {self.size}")
        if self.display is not None and len(self.display) != self.size:
            raise ConfigError("display strings must match vocab size")

    @property
    def mask_id(self) -> int:
        return self.size

    def check_token(self, tok: int) -> None:
        if not (0 <= tok < self.size):
            raise ConfigError(f"token id {tok} outside [0, {self.size})")

    def label(self, tok: int) -> str:
        if tok == self.mask_id:
            return "[MASK]"
        if self.display is not None:
            return self.display[tok]
        return str(tok)


@dataclass(frozen=True)
class SeqState:
    """Decoder state: immutable prompt plus L response slots at step ``step``.

    Response slots hold either a token id in ``[0, vocab.size)`` or the MASK
    sentinel. The prompt and response are kept separate so that non-prompt
    position bookkeeping is structurally unviolable; denoiser backends see
    the concatenation.
    """

    vocab: Vocab
    prompt: tuple[int, ...]
    response: tuple[int, ...]
    step: int = 1

    def __post_init__(self):
        for tok in self.prompt:
            self.vocab.check_token(tok)
        for tok in self.response:
            if tok != self.vocab.mask_id:
                self.vocab.check_token(tok)
        if self.step < 1:
            raise ConfigError(f"step must be >= 1, got {self.step}")

    @property
    def length(self) -> int:
        return len(self.response)

    def masked_positions(self) -> tuple[int, ...]:
        m = self.vocab.mask_id
        return tuple(i for i, tok in enumerate(self.response) if tok == m)

    def full_tokens(self) -> tuple[int, ...]:
        """Prompt followed by response, as seen by denoiser backends."""
        return self.prompt + self.response

    def with_step(self, step: int) -> "SeqState":
        return replace(self, step=step)

    def with_tokens(self, positions: Sequence[int], tokens: Sequence[int]) -> "SeqState":
        """Return a copy with ``tokens`` written at response ``positions``."""
        if len(positions) != len(tokens):
            raise PreconditionError("positions and tokens length mismatch")
        resp = list(self.response)
        for pos, tok in zip(positions, tokens):
            if not (0 <= pos < len(resp)):
                raise PreconditionError(f"response position {pos} out of range")
            self.vocab.check_token(tok)
            resp[pos] = tok
        return replace(self, response=tuple(resp))


def new_state(vocab: Vocab, prompt: Sequence[int], L: int) -> SeqState:
    """Initial state: all L response slots masked, step 1."""
    if L < 1:
        raise ConfigError(f"L must be >= 1, got {L}")
    return SeqState(
        vocab=vocab,
        prompt=tuple(prompt),
        response=(vocab.mask_id,) * L,
        step=1,
    )


def unmasked_response_positions(state: SeqState) -> tuple[int, ...]:
    """Response indices currently holding a committed token.

    This is the revisable candidate pool; prompt positions are never
    included by construction.
    """
    m = state.vocab.mask_id
    return tuple(i for i, tok in enumerate(state.response) if tok != m)


def apply_mask_subset(state: SeqState, subset: Sequence[int]) -> SeqState:
    """Return a copy of ``state`` with the given unmasked positions re-masked.

    ``subset`` must contain only currently-unmasked response indices. Masking
    S then S' (disjoint) equals masking S | S' in one call.
    """
    m = state.vocab.mask_id
    resp = list(state.response)
    seen = set()
    for pos in subset:
        if not (0 <= pos < len(resp)):
            raise PreconditionError(f"position {pos} out of response range")
        if pos in seen:
            raise PreconditionError(f"duplicate position {pos} in mask subset")
        if resp[pos] == m:
            raise PreconditionError(f"position {pos} is already masked")
        seen.add(pos)
        resp[pos] = m
    return replace(state, response=tuple(resp))


VALID_UNMASKERS = ("low_confidence", "topk_margin", "forced")
VALID_REVISERS = ("core", "remdm_conf", "random", "margin", "none")
VALID_COMPENSATION = ("next_step", "spread")


@dataclass(frozen=True)
class DecodeConfig:
    """All knobs for a decoding run.

    ``tau`` = 0 selects the deterministic smallest-margin candidate set;
    positive values use the soft selection distribution. ``temperature`` = 0
    is greedy token commitment. ``remdm_rate`` defaults to ``k_rm`` when
    unset.
    """

    N: int = 128
    L: int = 512
    gamma_s: float = 0.25
    gamma_e: float = 0.75
    E: int = 8
    m: int = 32
    k_rm: int = 1
    tau: float = 0.0
    unmasker: str = "low_confidence"
    reviser: str = "none"
    temperature: float = 0.0
    seed: int = 0
    remdm_rate: Optional[int] = None
    remdm_compensation: str = "next_step"

    def __post_init__(self):
        if self.N < 1 or self.L < 1:
            raise ConfigError("N and L must be positive")
        if not (0.0 <= self.gamma_s < self.gamma_e <= 1.0):
            raise ConfigError(
                f"window requires 0 <= gamma_s < gamma_e <= 1, got "
                f"[{self.gamma_s}, {self.gamma_e})"
            )
        if self.E < 1:
            raise ConfigError("E must be >= 1")
        if self.k_rm < 0 or self.m < 1:
            raise ConfigError("k_rm must be >= 0 and m >= 1")
        if self.k_rm > self.m:
            raise ConfigError(f"k_rm ({self.k_rm}) must not exceed m ({self.m})")
        if self.tau < 0:
            raise ConfigError("tau must be >= 0")
        if self.unmasker not in VALID_UNMASKERS:
            raise ConfigError(f"unknown unmasker {self.unmasker!r}")
        if self.reviser not in VALID_REVISERS:
            raise ConfigError(f"unknown reviser {self.reviser!r}")
        if self.remdm_compensation not in VALID_COMPENSATION:
            raise ConfigError(
                f"unknown remdm_compensation {self.remdm_compensation!r}"
            )

    @property
    def effective_remdm_rate(self) -> int:
        return self.k_rm if self.remdm_rate is None else self.remdm_rate

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DecodeConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)
