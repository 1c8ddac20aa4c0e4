"""Base unmasking: how many positions to commit each step, and which ones.

The per-step quota is uniform with the remainder spread over the earliest
steps, which makes the canonical N=128, L=512 regime exactly 4 per step.
Strategies rank masked positions by max-probability ("low_confidence") or
top-2 margin ("topk_margin"); "forced" follows an explicit position order
supplied by the task (used for adversarial decode-order experiments). Ties
always break toward the lowest position index, then lowest token id, so
runs are fully deterministic under greedy commitment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .denoiser import Categorical
from .errors import PreconditionError
from .state import SeqState
from .trace import RunTrace, Unmask


@dataclass(frozen=True)
class UnmaskPlan:
    step: int
    positions: tuple[int, ...]
    tokens: tuple[int, ...]
    probs: tuple[float, ...]   # probability each chosen token received
    scores: tuple[float, ...]  # selection score used for the ranking


def schedule_k(t: int, N: int, L: int) -> int:
    """Uniform-with-remainder allocation; sums to L over t = 1..N."""
    if not (1 <= t <= N):
        raise PreconditionError(f"step {t} outside [1, {N}]")
    return L // N + (1 if t <= L % N else 0)


def _choose_token(
    dist: Categorical, temperature: float, rng: Optional[np.random.Generator]
) -> int:
    if temperature <= 0:
        return dist.argmax()
    p = np.exp(dist.logp / temperature)
    p = p / p.sum()
    assert rng is not None, "temperature sampling requires an rng"
    return int(rng.choice(len(p), p=p))


def _ranked_plan(
    step: int,
    dists: Mapping[int, Categorical],
    k: int,
    score_fn,
    temperature: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> UnmaskPlan:
    if k < 0:
        raise PreconditionError("k must be >= 0")
    scored = sorted(
        ((score_fn(d), pos) for pos, d in dists.items()),
        key=lambda sp: (-sp[0], sp[1]),
    )
    chosen = scored[: min(k, len(scored))]
    positions, tokens, probs, scores = [], [], [], []
    for score, pos in chosen:
        tok = _choose_token(dists[pos], temperature, rng)
        positions.append(pos)
        tokens.append(tok)
        probs.append(float(np.exp(dists[pos].logp[tok])))
        scores.append(float(score))
    return UnmaskPlan(
        step=step,
        positions=tuple(positions),
        tokens=tuple(tokens),
        probs=tuple(probs),
        scores=tuple(scores),
    )


def select_low_confidence(
    step: int,
    dists: Mapping[int, Categorical],
    k: int,
    temperature: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> UnmaskPlan:
    """Unmask the k masked positions whose best token is most probable."""
    return _ranked_plan(
        step, dists, k, lambda d: float(np.max(np.exp(d.logp))), temperature, rng
    )


def select_topk_margin(
    step: int,
    dists: Mapping[int, Categorical],
    k: int,
    temperature: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> UnmaskPlan:
    """Unmask the k masked positions with the largest top-2 margins."""
    return _ranked_plan(
        step, dists, k, lambda d: d.top2_margin(), temperature, rng
    )


def select_forced(
    step: int,
    dists: Mapping[int, Categorical],
    order: Sequence[int],
    temperature: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> UnmaskPlan:
    """Unmask exactly the given positions, committing tokens greedily."""
    positions, tokens, probs = [], [], []
    for pos in order:
        if pos not in dists:
            raise PreconditionError(
                f"forced position {pos} has no base-pass distribution"
            )
        tok = _choose_token(dists[pos], temperature, rng)
        positions.append(pos)
        tokens.append(tok)
        probs.append(float(np.exp(dists[pos].logp[tok])))
    return UnmaskPlan(
        step=step,
        positions=tuple(positions),
        tokens=tuple(tokens),
        probs=tuple(probs),
        scores=tuple(probs),
    )


def commit(plan: UnmaskPlan, state: SeqState, trace: Optional[RunTrace] = None) -> SeqState:
    """Write the plan's tokens and log the Unmask event (no model pass)."""
    mask = state.vocab.mask_id
    for pos in plan.positions:
        if state.response[pos] != mask:
            raise PreconditionError(
                f"commit at already-unmasked position {pos}"
            )
    if not plan.positions:
        return state
    out = state.with_tokens(plan.positions, plan.tokens)
    if trace is not None:
        trace.append(
            Unmask(
                step=plan.step,
                positions=plan.positions,
                tokens=plan.tokens,
                probs=plan.probs,
            )
        )
    return out
