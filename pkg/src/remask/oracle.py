"""Exhaustive ground-truth machinery for the revision objective.

Everything here trades compute for certainty: worst-case instability by
brute-force subset search (with an independently coded second enumerator
guarding the first), exact expectation of the perturbation objective by
summing over all Bernoulli masks, and Monte-Carlo counterparts for
cross-checks. Instance sizes are capped so the full acceptance suite stays
fast.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .denoiser import DenoiserBackend, predict
from .errors import EnumerationCapError, PreconditionError
from .state import SeqState, apply_mask_subset

DEFAULT_SUBSET_CAP = 2_000_000


def instability_under_subset(
    state: SeqState,
    subset: Sequence[int],
    backend: DenoiserBackend,
    positions: Optional[Sequence[int]] = None,
) -> dict[int, float]:
    """Negative log-likelihood of current tokens with ``subset`` masked.

    ``positions`` defaults to the whole subset. No trace bookkeeping: the
    oracle's passes are not part of any run budget.
    """
    subset = tuple(sorted(subset))
    targets = tuple(subset if positions is None else positions)
    perturbed = apply_mask_subset(state, subset)
    dists = predict(backend, perturbed, targets)
    return {
        i: -float(dists[i].logp[state.response[i]]) for i in targets
    }


def _subsets_combinations(candidates, m, j):
    """Primary enumerator: all subsets of candidates containing j, size <= m."""
    rest = [c for c in candidates if c != j]
    for size in range(0, min(m, len(rest) + 1)):
        for combo in itertools.combinations(rest, size):
            yield tuple(sorted((j,) + combo))


def _subsets_bitmask(candidates, m, j):
    """Second, independently written enumerator using bitmask counting."""
    rest = sorted(c for c in candidates if c != j)
    n = len(rest)
    out = []
    for bits in range(1 << n):
        if bin(bits).count("1") > m - 1:
            continue
        subset = [rest[i] for i in range(n) if bits >> i & 1]
        subset.append(j)
        out.append(tuple(sorted(subset)))
    out.sort(key=lambda s: (len(s), s))
    return out


def count_feasible_subsets(n_candidates: int, m: int) -> int:
    """Subsets of an n-candidate pool containing a fixed j, size <= m."""
    import math

    return sum(math.comb(n_candidates - 1, s) for s in range(0, m))


def exhaustive_worst_case(
    state: SeqState,
    j: int,
    candidates: Sequence[int],
    m: int,
    backend: DenoiserBackend,
    cap: int = DEFAULT_SUBSET_CAP,
    cross_check: bool = True,
) -> tuple[float, tuple[int, ...]]:
    """Exact worst-case instability of j over subsets of size <= m containing j.

    Refuses (never silently samples) when the subset count exceeds ``cap``.
    With ``cross_check``, both enumerators must produce the identical subset
    family.
    """
    candidates = tuple(sorted(candidates))
    if j not in candidates:
        raise PreconditionError(f"index {j} not in candidate set")
    n = count_feasible_subsets(len(candidates), m)
    if n > cap:
        raise EnumerationCapError(
            f"{n} feasible subsets exceed cap {cap} "
            f"(|C|={len(candidates)}, m={m})"
        )
    subsets = sorted(_subsets_combinations(candidates, m, j), key=lambda s: (len(s), s))
    if cross_check:
        other = _subsets_bitmask(candidates, m, j)
        if subsets != other:
            raise AssertionError("subset enumerators disagree")
    best = -np.inf
    best_subset: tuple[int, ...] = ()
    for subset in subsets:
        ell = instability_under_subset(state, subset, backend, positions=(j,))[j]
        if ell > best:
            best = ell
            best_subset = subset
    return float(best), best_subset


@dataclass(frozen=True)
class WorstCaseReport:
    """Per-index certified bounds for one (state, S_t) pair."""

    candidates: tuple[int, ...]
    subset: tuple[int, ...]
    m: int
    computed: dict[int, float]        # instability under the chosen subset
    worst_case: dict[int, float]      # exhaustive maximum per index
    maximizer: dict[int, tuple[int, ...]]
    violations: tuple[int, ...]       # indices where computed > worst + tol
    tolerance: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "candidates": list(self.candidates),
            "subset": list(self.subset),
            "m": self.m,
            "computed": {str(k): v for k, v in self.computed.items()},
            "worst_case": {str(k): v for k, v in self.worst_case.items()},
            "maximizer": {str(k): list(v) for k, v in self.maximizer.items()},
            "violations": list(self.violations),
            "tolerance": self.tolerance,
            "ok": self.ok,
        }


def certify_lower_bound(
    state: SeqState,
    subset: Sequence[int],
    candidates: Sequence[int],
    m: int,
    backend: DenoiserBackend,
    tolerance: float = 1e-9,
    cap: int = DEFAULT_SUBSET_CAP,
) -> WorstCaseReport:
    """Check that per-index instability under ``subset`` never exceeds the
    exhaustive worst case.

    A violation indicates an implementation bug: the bound holds identically
    because the chosen subset is itself feasible in the maximization.
    """
    subset = tuple(sorted(subset))
    candidates = tuple(sorted(candidates))
    if len(subset) > m:
        raise PreconditionError(f"|S|={len(subset)} exceeds m={m}")
    computed = instability_under_subset(state, subset, backend)
    worst, argmax = {}, {}
    for j in subset:
        r, s_star = exhaustive_worst_case(state, j, candidates, m, backend, cap=cap)
        worst[j] = r
        argmax[j] = s_star
    violations = tuple(
        j for j in subset if computed[j] > worst[j] + tolerance
    )
    return WorstCaseReport(
        candidates=candidates,
        subset=subset,
        m=m,
        computed=computed,
        worst_case=worst,
        maximizer=argmax,
        violations=violations,
        tolerance=tolerance,
    )


def sample_perturbed_context(
    state: SeqState,
    candidates: Sequence[int],
    pi: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, SeqState]:
    """Draw a Bernoulli mask over the candidate pool and build the perturbed
    state; positions outside the pool are never perturbed."""
    candidates = tuple(sorted(candidates))
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (len(candidates),):
        raise PreconditionError("pi length must match candidate pool")
    if np.any(pi < 0) or np.any(pi > 1):
        raise PreconditionError("pi entries must lie in [0, 1]")
    z = np.zeros(state.length, dtype=np.int64)
    draws = rng.random(len(candidates)) < pi
    subset = [c for c, hit in zip(candidates, draws) if hit]
    z[subset] = 1
    return z, apply_mask_subset(state, subset)


def _objective_for_subset(state, subset, backend) -> float:
    """Mean instability over the masked indices; empty subsets contribute 0."""
    if not subset:
        return 0.0
    ells = instability_under_subset(state, subset, backend)
    return float(np.mean([ells[i] for i in subset]))


def dro_objective_exact(
    state: SeqState,
    candidates: Sequence[int],
    pi: np.ndarray,
    backend: DenoiserBackend,
) -> float:
    """Exact expectation of the mean-instability objective over all masks."""
    candidates = tuple(sorted(candidates))
    n = len(candidates)
    if n > 16:
        raise EnumerationCapError("exact mode limited to |C_t| <= 16")
    pi = np.asarray(pi, dtype=np.float64)
    total = 0.0
    for bits in range(1 << n):
        subset = tuple(candidates[i] for i in range(n) if bits >> i & 1)
        weight = 1.0
        for i in range(n):
            weight *= pi[i] if bits >> i & 1 else 1.0 - pi[i]
        if weight == 0.0:
            continue
        total += weight * _objective_for_subset(state, subset, backend)
    return total


def dro_objective_mc(
    state: SeqState,
    candidates: Sequence[int],
    pi: np.ndarray,
    backend: DenoiserBackend,
    samples: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte-Carlo estimate of the objective; returns (mean, standard error).

    Distinct masks are evaluated once and weighted by their draw counts,
    which leaves the estimator unchanged while avoiding repeated backend
    calls.
    """
    if samples < 1:
        raise PreconditionError("samples must be >= 1")
    candidates = tuple(sorted(candidates))
    n = len(candidates)
    pi = np.asarray(pi, dtype=np.float64)
    draws = rng.random((samples, n)) < pi
    keys, counts = np.unique(draws, axis=0, return_counts=True)
    values = np.empty(len(keys), dtype=np.float64)
    for idx, row in enumerate(keys):
        subset = tuple(candidates[i] for i in range(n) if row[i])
        values[idx] = _objective_for_subset(state, subset, backend)
    mean = float(np.sum(values * counts) / samples)
    var = float(np.sum(counts * (values - mean) ** 2) / samples)
    se = float(np.sqrt(var / samples))
    return mean, se


def dro_objective(
    state: SeqState,
    candidates: Sequence[int],
    pi: np.ndarray,
    backend: DenoiserBackend,
    samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Exact expectation when feasible, otherwise Monte Carlo."""
    if samples is None:
        return dro_objective_exact(state, candidates, pi, backend)
    if rng is None:
        rng = np.random.default_rng(0)
    return dro_objective_mc(state, candidates, pi, backend, samples, rng)[0]
