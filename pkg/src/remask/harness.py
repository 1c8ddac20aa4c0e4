"""Experiment harness: the full decoding loop, reports, and significance.

The loop follows one fixed shape per step: a base model pass over the
current state, an optional revision stage (probe + rewrite, or a
confidence-weighted remask), then scheduled unmasking that always consumes
the base pass's distributions — never the revision pass's. NFE accounting
therefore reads directly off the trace: one base pass per step plus one
revision pass per probe step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .denoiser import DenoiserBackend, NGramBackend, RemoteBackend, predict
from .errors import BudgetMismatchError, ConfigError, PreconditionError
from .reviser import (
    ConfidenceCache,
    RevisionPlan,
    control_apply,
    core_apply,
    core_probe,
    remdm_conf_step,
    revision_active,
    select_candidates_margin,
)
from .state import DecodeConfig, SeqState, new_state, unmasked_response_positions
from .taskgen import TaskInstance
from .trace import RunTrace
from .unmasker import (
    commit,
    schedule_k,
    select_forced,
    select_low_confidence,
    select_topk_margin,
)


@dataclass
class RunReport:
    """Everything measurable about one decoding run."""

    config: DecodeConfig
    final_response: tuple[int, ...]
    valid: Optional[bool]
    loglik: Optional[float]
    nfe: int
    base_passes: int
    revision_passes: int
    probe_count: int
    revised_changed: int
    revised_unchanged: int
    unmask_positions: int
    remask_positions: int
    ell_changed: list[float] = field(default_factory=list)
    ell_unchanged: list[float] = field(default_factory=list)
    psi: dict[int, float] = field(default_factory=dict)
    trace: Optional[RunTrace] = None

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "final_response": list(self.final_response),
            "valid": self.valid,
            "loglik": self.loglik,
            "nfe": self.nfe,
            "base_passes": self.base_passes,
            "revision_passes": self.revision_passes,
            "probe_count": self.probe_count,
            "revised_changed": self.revised_changed,
            "revised_unchanged": self.revised_unchanged,
            "unmask_positions": self.unmask_positions,
            "remask_positions": self.remask_positions,
            "ell_changed": self.ell_changed,
            "ell_unchanged": self.ell_unchanged,
            "psi": {str(k): v for k, v in sorted(self.psi.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def build_backend(
    spec: str, task: TaskInstance, seed: int = 0
) -> DenoiserBackend:
    """Backend factory: ``tabular``, ``ngram``, ``remote:HOST:PORT`` or
    ``remote:stdio:CMD...``."""
    if spec == "tabular":
        return task.model()
    if spec == "ngram":
        rng = np.random.default_rng(seed)
        V = task.vocab.size
        unigram = rng.uniform(0.1, 1.0, size=V)
        bigram = rng.uniform(0.1, 1.0, size=(V, V))
        return NGramBackend(task.vocab, unigram, bigram)
    if spec.startswith("remote:stdio:"):
        cmd = spec[len("remote:stdio:"):].split()
        return RemoteBackend(task.vocab, stdio_cmd=cmd)
    if spec.startswith("remote:"):
        _, host, port = spec.split(":", 2)
        return RemoteBackend(task.vocab, host=host, port=int(port))
    raise ConfigError(f"unknown backend spec {spec!r}")


def _unmask_quota(
    t: int, config: DecodeConfig, pending: int
) -> tuple[int, int]:
    """Scheduled quota for step t plus compensation slots; returns
    (quota, remaining_pending)."""
    base = schedule_k(t, config.N, config.L)
    if pending <= 0:
        return base, 0
    if config.remdm_compensation == "next_step":
        return base + pending, 0
    return base + 1, pending - 1  # spread: one extra slot per step


def run(
    config: DecodeConfig,
    task: TaskInstance,
    backend: Optional[DenoiserBackend] = None,
    backend_spec: str = "tabular",
) -> RunReport:
    """Execute one full decoding run and collect its report."""
    if backend is None:
        backend = build_backend(backend_spec, task, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    trace = RunTrace()
    cache = ConfidenceCache()
    state = new_state(task.vocab, task.prompt, config.L)

    forced_groups: list[list[int]] = []
    if config.unmasker == "forced":
        if not task.trap or "order" not in task.trap:
            raise ConfigError("forced unmasker requires task adversarial order")
        forced_groups = [list(g) for g in task.trap["order"]]

    probe_count = 0
    revised_changed = 0
    revised_unchanged = 0
    ell_changed: list[float] = []
    ell_unchanged: list[float] = []
    pending = 0

    for t in range(1, config.N + 1):
        state = state.with_step(t)
        masked = state.masked_positions()
        dists = predict(backend, state, masked, trace=trace, purpose="base")

        candidates = unmasked_response_positions(state)
        if revision_active(t, config, num_candidates=len(candidates)):
            if config.reviser in ("core", "random", "margin"):
                old_tokens = {p: state.response[p] for p in candidates}
                margins = {p: cache.margin.get(p, 0.0) for p in candidates}
                if config.reviser == "random":
                    picked = rng.choice(
                        len(candidates),
                        size=min(config.m, len(candidates)),
                        replace=False,
                    )
                    selection_order = [candidates[int(i)] for i in picked]
                    subset = tuple(sorted(selection_order))
                else:
                    subset = select_candidates_margin(margins, config.m)
                    selection_order = sorted(subset, key=lambda p: (margins[p], p))
                probe = core_probe(state, subset, backend, trace=trace)
                probe_count += 1
                if config.reviser == "core":
                    state, plan = core_apply(
                        state, probe, config.k_rm, margins, trace=trace, cache=cache
                    )
                else:
                    state, plan = control_apply(
                        state,
                        probe,
                        config.k_rm,
                        selection_order,
                        margins,
                        trace=trace,
                        cache=cache,
                    )
                changed_set = {
                    p
                    for p in plan.revised
                    if state.response[p] != old_tokens[p]
                }
                for pos in plan.candidates:
                    ell = probe[pos].instability
                    if pos in changed_set:
                        revised_changed += 1
                        ell_changed.append(ell)
                    else:
                        if pos in plan.revised:
                            revised_unchanged += 1
                        ell_unchanged.append(ell)
            elif config.reviser == "remdm_conf":
                if t < config.N:  # never strand a mask with no step left
                    state, resets = remdm_conf_step(
                        state, cache, config.effective_remdm_rate, rng, trace=trace
                    )
                    pending += resets

        # Scheduled unmasking, always from the base pass distributions.
        available = {p: d for p, d in dists.items() if state.response[p] == task.vocab.mask_id}
        if config.unmasker == "forced":
            group = forced_groups[t - 1] if t - 1 < len(forced_groups) else []
            if t == config.N:
                group = list(group) + [
                    p for p in sorted(available) if p not in group
                ]
            plan_u = select_forced(
                t, available, group, config.temperature, rng
            )
        else:
            k, pending = _unmask_quota(t, config, pending)
            if t == config.N:
                k = len(available)
            selector = (
                select_low_confidence
                if config.unmasker == "low_confidence"
                else select_topk_margin
            )
            plan_u = selector(t, available, k, config.temperature, rng)
        state = commit(plan_u, state, trace=trace)
        for pos, prob in zip(plan_u.positions, plan_u.probs):
            cache.commit(pos, prob, available[pos].top2_margin())

    final = state.response
    valid = None
    loglik = None
    if task.joint is not None:
        checker = task.checker()
        mask = task.vocab.mask_id
        valid = mask not in final and bool(checker(final))
        if mask not in final:
            loglik = task.model().log_likelihood(final)

    return RunReport(
        config=config,
        final_response=final,
        valid=valid,
        loglik=loglik,
        nfe=trace.nfe(),
        base_passes=trace.passes("base"),
        revision_passes=trace.passes("revision"),
        probe_count=probe_count,
        revised_changed=revised_changed,
        revised_unchanged=revised_unchanged,
        unmask_positions=trace.unmask_position_count(),
        remask_positions=trace.remask_position_count(),
        ell_changed=ell_changed,
        ell_unchanged=ell_unchanged,
        psi=dict(cache.psi),
        trace=trace,
    )


def mcnemar_exact(b: int, c: int) -> float:
    """Two-sided exact McNemar test on discordant pair counts.

    Exact binomial form (not the chi-square approximation): with n = b + c
    discordant pairs, p = min(1, 2 * P[X <= min(b, c)]) for X ~ Bin(n, 1/2).
    Zero discordant pairs yield p = 1 by convention.
    """
    if b < 0 or c < 0:
        raise PreconditionError("discordant counts must be non-negative")
    n = b + c
    if n == 0:
        return 1.0
    k = min(b, c)
    tail = sum(math.comb(n, i) for i in range(k + 1))
    p = 2.0 * tail / (2 ** n)
    return min(1.0, p)


def compare(
    configs: dict[str, DecodeConfig],
    tasks: Sequence[TaskInstance],
    seeds: Sequence[int],
    backend_spec: str = "tabular",
    annotate_budgets: bool = False,
) -> dict:
    """Run every config over every (task, seed) pair and aggregate.

    Paired per-instance validity outcomes are retained so any two methods
    can be compared with the exact McNemar test. Unless ``annotate_budgets``
    is set, all methods must spend the same NFE count on every instance.
    """
    if not tasks:
        raise ConfigError("empty task set")
    if not configs:
        raise ConfigError("no configs to compare")
    outcomes: dict[str, list[bool]] = {name: [] for name in configs}
    logliks: dict[str, list[float]] = {name: [] for name in configs}
    nfes: dict[str, list[int]] = {name: [] for name in configs}
    for task in tasks:
        for seed in seeds:
            per_instance_nfe = {}
            for name, cfg in configs.items():
                cfg_seeded = DecodeConfig.from_dict({**cfg.to_dict(), "seed": seed})
                rep = run(cfg_seeded, task, backend_spec=backend_spec)
                outcomes[name].append(bool(rep.valid))
                if rep.loglik is not None:
                    logliks[name].append(rep.loglik)
                nfes[name].append(rep.nfe)
                per_instance_nfe[name] = rep.nfe
            if not annotate_budgets and len(set(per_instance_nfe.values())) > 1:
                raise BudgetMismatchError(
                    f"NFE budgets differ without annotation: {per_instance_nfe}"
                )
    methods = {}
    for name in configs:
        methods[name] = {
            "validity_rate": float(np.mean(outcomes[name])),
            "mean_loglik": float(np.mean(logliks[name])) if logliks[name] else None,
            "mean_nfe": float(np.mean(nfes[name])),
        }
    names = list(configs)
    pairwise = {}
    for i, a in enumerate(names):
        for bname in names[i + 1:]:
            b = sum(
                1 for x, y in zip(outcomes[a], outcomes[bname]) if x and not y
            )
            c = sum(
                1 for x, y in zip(outcomes[a], outcomes[bname]) if not x and y
            )
            pairwise[f"{a}|{bname}"] = {
                "b": b,
                "c": c,
                "p": mcnemar_exact(b, c),
            }
    return {
        "methods": methods,
        "pairwise": pairwise,
        "outcomes": {k: [bool(v) for v in vals] for k, vals in outcomes.items()},
        "budgets_annotated": annotate_budgets,
    }


def histogram_report(
    reports: Sequence[RunReport], bins: int = 20
) -> dict:
    """Binned instability histogram split by revised-changed vs unchanged.

    Returns a dict with a CSV rendering plus summary quantiles; plotting is
    left to external tools.
    """
    changed = [x for r in reports for x in r.ell_changed]
    unchanged = [x for r in reports for x in r.ell_unchanged]
    if not changed and not unchanged:
        return {"csv": "", "warning": "no probes recorded", "quantiles": {}}
    hi = max(changed + unchanged)
    edges = np.linspace(0.0, max(hi, 1e-9), bins + 1)
    h_changed, _ = np.histogram(changed, bins=edges)
    h_unchanged, _ = np.histogram(unchanged, bins=edges)
    lines = ["bin_lo,bin_hi,revised,unchanged"]
    for i in range(bins):
        lines.append(
            f"{edges[i]:.6g},{edges[i + 1]:.6g},{h_changed[i]},{h_unchanged[i]}"
        )

    def quants(xs):
        if not xs:
            return None
        return {
            "median": float(np.median(xs)),
            "q90": float(np.quantile(xs, 0.9)),
            "max": float(np.max(xs)),
            "count": len(xs),
        }

    return {
        "csv": "\n".join(lines) + "\n",
        "quantiles": {"revised": quants(changed), "unchanged": quants(unchanged)},
    }
