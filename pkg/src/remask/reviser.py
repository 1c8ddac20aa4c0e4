"""Revision strategies for committed tokens.

The context-robust path ("core") screens candidates by their cached top-2
margin, masks the whole candidate set at once, and measures each
candidate's instability — the negative log-likelihood of its current token
under that perturbed context — in a single auxiliary pass. The positions
with the largest instability are rewritten to the perturbed-context argmax.

The compute-matched controls ("random", "margin") share the probe plumbing
but pick rewrite targets by their selection score instead of instability.
The confidence-cache strategy ("remdm_conf") resets low-cached-confidence
positions back to MASK and compensates by enlarging later unmask quotas; it
costs no auxiliary pass.

Margins and confidences used for screening are the ones cached at each
position's most recent commitment (unmask or rewrite): no extra forward
pass is ever spent on screening, which keeps the one-auxiliary-pass budget
exact. The instability signal itself is always fresh.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .denoiser import DenoiserBackend, predict
from .errors import PreconditionError
from .state import DecodeConfig, SeqState, apply_mask_subset, unmasked_response_positions
from .trace import RemaskApply, ReviseApply, ReviseProbe, RunTrace


@dataclass
class ConfidenceCache:
    """Per-position values recorded when a token was last committed.

    ``psi`` is the probability the current token received; ``margin`` is the
    top-2 margin of the distribution it was drawn from. Entries are cleared
    when a position is re-masked and re-set when it is committed again.
    """

    psi: dict[int, float] = field(default_factory=dict)
    margin: dict[int, float] = field(default_factory=dict)

    def commit(self, pos: int, psi: float, margin: float) -> None:
        self.psi[pos] = psi
        self.margin[pos] = margin

    def clear(self, pos: int) -> None:
        self.psi.pop(pos, None)
        self.margin.pop(pos, None)


def revision_active(
    t: int, config: DecodeConfig, num_candidates: Optional[int] = None
) -> bool:
    """Whether the revision stage runs at step ``t``.

    Active iff t/N lies in the [gamma_s, gamma_e) window, t is a multiple of
    E, the remasking limit is positive, and (when known) there is at least
    one revisable position.
    """
    if not (1 <= t <= config.N):
        raise PreconditionError(f"step {t} outside [1, {config.N}]")
    frac = t / config.N
    if not (config.gamma_s <= frac < config.gamma_e):
        return False
    if t % config.E != 0:
        return False
    if config.k_rm <= 0:
        return False
    if num_candidates is not None and num_candidates == 0:
        return False
    return True


def select_candidates_margin(
    margins: Mapping[int, float], m: int
) -> tuple[int, ...]:
    """The min(m, |C_t|) positions with the smallest margins, ties by index.

    Returned in increasing position order.
    """
    ranked = sorted(margins.items(), key=lambda kv: (kv[1], kv[0]))
    chosen = [pos for pos, _ in ranked[: min(m, len(ranked))]]
    return tuple(sorted(chosen))


def soft_pi(u: np.ndarray, m: int, tau: float) -> np.ndarray:
    """Per-position perturbation probabilities from vulnerability scores.

    pi_i = min(1, m * softmax(u / tau)_i). Mass clamped off by the min is
    not redistributed (the formula is applied verbatim).
    """
    if tau <= 0:
        raise PreconditionError("soft_pi requires tau > 0; use the "
                                "deterministic smallest-margin path instead")
    u = np.asarray(u, dtype=np.float64)
    w = u / tau
    w = w - np.max(w)
    e = np.exp(w)
    return np.minimum(1.0, m * e / e.sum())


@dataclass(frozen=True)
class ProbeResult:
    """Instability and replacement info for one probed position."""

    instability: float
    replacement: int
    replacement_prob: float
    margin: float  # top-2 margin of the probe distribution


def core_probe(
    state: SeqState,
    candidates: Sequence[int],
    backend: DenoiserBackend,
    trace: Optional[RunTrace] = None,
) -> dict[int, ProbeResult]:
    """Mask all candidates simultaneously and score them in one pass.

    Returns, per candidate, the negative log-likelihood of its current
    token under the perturbed context and the argmax replacement token.
    Atomic: a backend failure leaves no partial revision.
    """
    cands = tuple(sorted(candidates))
    if not cands:
        raise PreconditionError("candidate set must be non-empty")
    unmasked = set(unmasked_response_positions(state))
    for pos in cands:
        if pos not in unmasked:
            raise PreconditionError(f"candidate {pos} is not unmasked")
    perturbed = apply_mask_subset(state, cands)
    dists = predict(backend, perturbed, cands, trace=trace, purpose="revision")
    results = {}
    for pos in cands:
        dist = dists[pos]
        current = state.response[pos]
        ell = -float(dist.logp[current])
        repl = dist.argmax()
        results[pos] = ProbeResult(
            instability=ell,
            replacement=repl,
            replacement_prob=float(np.exp(dist.logp[repl])),
            margin=dist.top2_margin(),
        )
    if trace is not None:
        trace.append(
            ReviseProbe(
                step=state.step,
                candidates=cands,
                instability=tuple(results[p].instability for p in cands),
            )
        )
    return results


@dataclass(frozen=True)
class RevisionPlan:
    step: int
    candidates: tuple[int, ...]
    margins: tuple[float, ...]
    instability: tuple[float, ...]
    revised: tuple[int, ...]
    replacements: tuple[int, ...]


def _apply_rewrites(
    state: SeqState,
    probe: Mapping[int, ProbeResult],
    revised: Sequence[int],
    trace: Optional[RunTrace],
    cache: Optional[ConfidenceCache],
) -> SeqState:
    revised = tuple(revised)
    if not revised:
        return state
    old = tuple(state.response[p] for p in revised)
    new = tuple(probe[p].replacement for p in revised)
    out = state.with_tokens(revised, new)
    if trace is not None:
        trace.append(
            ReviseApply(
                step=state.step, positions=revised, old_tokens=old, new_tokens=new
            )
        )
    if cache is not None:
        for pos in revised:
            cache.commit(pos, probe[pos].replacement_prob, probe[pos].margin)
    return out


def core_apply(
    state: SeqState,
    probe: Mapping[int, ProbeResult],
    k_rm: int,
    candidate_margins: Mapping[int, float],
    trace: Optional[RunTrace] = None,
    cache: Optional[ConfidenceCache] = None,
) -> tuple[SeqState, RevisionPlan]:
    """Rewrite the min(k_rm, |S_t|) probed positions with largest instability.

    Rewriting to the same token is allowed and still logged (old == new);
    such positions count as "unchanged" in instability reporting.
    """
    cands = tuple(sorted(probe))
    ranked = sorted(cands, key=lambda p: (-probe[p].instability, p))
    revised = tuple(sorted(ranked[: min(k_rm, len(ranked))]))
    out = _apply_rewrites(state, probe, revised, trace, cache)
    plan = RevisionPlan(
        step=state.step,
        candidates=cands,
        margins=tuple(float(candidate_margins.get(p, float("nan"))) for p in cands),
        instability=tuple(probe[p].instability for p in cands),
        revised=revised,
        replacements=tuple(probe[p].replacement for p in revised),
    )
    return out, plan


def control_apply(
    state: SeqState,
    probe: Mapping[int, ProbeResult],
    k_rm: int,
    selection_order: Sequence[int],
    candidate_margins: Mapping[int, float],
    trace: Optional[RunTrace] = None,
    cache: Optional[ConfidenceCache] = None,
) -> tuple[SeqState, RevisionPlan]:
    """Rewrite the first k_rm candidates in selection-score order.

    This is the compute-matched control path: the probe is identical to the
    robust strategy, but rewrite targets come from the selection score
    (random draw order, or smallest cached margin) rather than instability.
    """
    cands = tuple(sorted(probe))
    revised = tuple(sorted(list(selection_order)[: min(k_rm, len(cands))]))
    out = _apply_rewrites(state, probe, revised, trace, cache)
    plan = RevisionPlan(
        step=state.step,
        candidates=cands,
        margins=tuple(float(candidate_margins.get(p, float("nan"))) for p in cands),
        instability=tuple(probe[p].instability for p in cands),
        revised=revised,
        replacements=tuple(probe[p].replacement for p in revised),
    )
    return out, plan


def select_remdm_positions(
    psi: Mapping[int, float], k: int, rng: np.random.Generator
) -> tuple[int, ...]:
    """Sample k positions without replacement with probability ∝ (1 - psi).

    Falls back to uniform when every cached confidence equals 1.
    """
    positions = sorted(psi)
    if not positions:
        return ()
    weights = np.array([1.0 - psi[p] for p in positions], dtype=np.float64)
    weights = np.clip(weights, 0.0, 1.0)
    if weights.sum() <= 0:
        weights = np.ones_like(weights)
    chosen: list[int] = []
    avail = list(range(len(positions)))
    for _ in range(min(k, len(positions))):
        w = weights[avail]
        if w.sum() <= 0:
            w = np.ones_like(w)
        w = w / w.sum()
        idx = int(rng.choice(len(avail), p=w))
        chosen.append(positions[avail[idx]])
        avail.pop(idx)
    return tuple(chosen)


def remdm_conf_step(
    state: SeqState,
    cache: ConfidenceCache,
    k: int,
    rng: np.random.Generator,
    trace: Optional[RunTrace] = None,
) -> tuple[SeqState, int]:
    """Reset up to k committed positions to MASK, weighted by 1 - psi.

    Returns the reset count so the unmask schedule can add that many extra
    slots later, preserving total committed positions = L + resets. Costs
    no model pass: the stale cached confidences are the whole signal.
    """
    candidates = unmasked_response_positions(state)
    if not candidates:
        return state, 0
    psi = {p: cache.psi.get(p, 1.0) for p in candidates}
    targets = tuple(sorted(select_remdm_positions(psi, k, rng)))
    if not targets:
        return state, 0
    out = apply_mask_subset(state, targets)
    if trace is not None:
        trace.append(RemaskApply(step=state.step, positions=targets))
    for pos in targets:
        cache.clear(pos)
    return out, len(targets)
