"""Synthetic desk-scale tasks with exact validity checkers and joints.

Every acceptance task carries an exact joint so the denoiser is the true
conditional: decoding behaviour is then a decidable property of the
algorithm, not of model error. Two base families (balanced brackets,
define-before-use bindings) come with uniform-over-valid joints; the trap
planter reweights a base instance so that an adversarial decode order
provably commits an early error that only fuller context exposes.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .denoiser import TabularJointModel, TABULAR_MAX_L, TABULAR_MAX_V
from .errors import ConfigError
from .state import Vocab

# Joint entries above this probability constitute the task's support; trap
# planting leaves a uniform smoothing floor well below it so probe contexts
# are never zero-mass.
SUPPORT_EPS = 1e-6
SMOOTHING_TOTAL = 1e-9


@dataclass(frozen=True)
class TaskInstance:
    """A generation task: prompt, length, validity checker, optional joint."""

    kind: str  # "bracket" | "binding" | "trap"
    vocab: Vocab
    prompt: tuple[int, ...]
    L: int
    seed: int
    meta: dict = field(default_factory=dict)
    joint: Optional[np.ndarray] = None
    trap: Optional[dict] = None

    def checker(self) -> Callable[[Sequence[int]], bool]:
        return make_checker(self)

    def model(self) -> TabularJointModel:
        if self.joint is None:
            raise ConfigError("task has no tabular joint attached")
        return TabularJointModel(self.vocab, self.joint, self.prompt)

    def support(self) -> list[tuple[int, ...]]:
        if self.joint is None:
            raise ConfigError("task has no tabular joint attached")
        idx = np.argwhere(self.joint > SUPPORT_EPS)
        return [tuple(int(v) for v in row) for row in idx]

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "vocab_size": self.vocab.size,
            "prompt": list(self.prompt),
            "L": self.L,
            "seed": self.seed,
            "meta": self.meta,
            "joint": None
            if self.joint is None
            else [float(x) for x in self.joint.reshape(-1)],
            "trap": self.trap,
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "TaskInstance":
        doc = json.loads(text)
        vocab = Vocab(size=doc["vocab_size"])
        joint = None
        if doc["joint"] is not None:
            L = doc["L"]
            joint = np.asarray(doc["joint"], dtype=np.float64).reshape(
                (vocab.size,) * L
            )
        return cls(
            kind=doc["kind"],
            vocab=vocab,
            prompt=tuple(doc["prompt"]),
            L=doc["L"],
            seed=doc["seed"],
            meta=doc.get("meta", {}),
            joint=joint,
            trap=doc.get("trap"),
        )


# --- validity checkers -------------------------------------------------------

def bracket_valid(seq: Sequence[int], types: int, depth: int) -> bool:
    """Balanced, type-matched, nesting depth <= depth.

    Token 2i opens bracket type i; token 2i+1 closes it.
    """
    stack: list[int] = []
    for tok in seq:
        if tok < 0 or tok >= 2 * types:
            return False
        if tok % 2 == 0:
            stack.append(tok // 2)
            if len(stack) > depth:
                return False
        else:
            if not stack or stack[-1] != tok // 2:
                return False
            stack.pop()
    return not stack


def binding_valid(seq: Sequence[int], nvars: int) -> bool:
    """Every use token must be preceded by its variable's define token.

    Token v < nvars defines variable v; token nvars + v uses it.
    """
    defined: set[int] = set()
    for tok in seq:
        if tok < 0 or tok >= 2 * nvars:
            return False
        if tok < nvars:
            defined.add(tok)
        elif tok - nvars not in defined:
            return False
    return True


def make_checker(task: TaskInstance) -> Callable[[Sequence[int]], bool]:
    if task.kind == "bracket":
        types = task.meta["types"]
        depth = task.meta["depth"]
        return lambda seq: bracket_valid(seq, types, depth)
    if task.kind == "binding":
        nvars = task.meta["vars"]
        return lambda seq: binding_valid(seq, nvars)
    if task.kind == "trap":
        support = {tuple(s) for s in task.trap["support"]}
        return lambda seq: tuple(seq) in support
    raise ConfigError(f"unknown task kind {task.kind!r}")


# --- enumeration -------------------------------------------------------------

def enumerate_bracket_strings(
    L: int, types: int, depth: int
) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []

    def rec(prefix: list[int], stack: list[int]):
        if len(prefix) == L:
            if not stack:
                out.append(tuple(prefix))
            return
        remaining = L - len(prefix)
        if len(stack) > remaining:
            return
        if len(stack) < depth and len(stack) + 1 <= remaining:
            for ty in range(types):
                stack.append(ty)
                prefix.append(2 * ty)
                rec(prefix, stack)
                prefix.pop()
                stack.pop()
        if stack:
            ty = stack.pop()
            prefix.append(2 * ty + 1)
            rec(prefix, stack)
            prefix.pop()
            stack.append(ty)

    rec([], [])
    return out


def enumerate_binding_strings(L: int, nvars: int) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []

    def rec(prefix: list[int], defined: frozenset[int]):
        if len(prefix) == L:
            out.append(tuple(prefix))
            return
        for v in range(nvars):
            prefix.append(v)
            rec(prefix, defined | {v})
            prefix.pop()
        for v in sorted(defined):
            prefix.append(nvars + v)
            rec(prefix, defined)
            prefix.pop()

    rec([], frozenset())
    return out


def count_binding_strings(L: int, nvars: int) -> int:
    """Independent count by dynamic programming over the defined-set lattice."""
    counts = {frozenset(): 1}
    for _ in range(L):
        nxt: dict[frozenset, int] = {}
        for defined, c in counts.items():
            for v in range(nvars):
                key = defined | {v}
                nxt[key] = nxt.get(key, 0) + c
            for _v in defined:
                nxt[defined] = nxt.get(defined, 0) + c
        counts = nxt
    return sum(counts.values())


def _uniform_joint(
    vocab: Vocab, L: int, support: Sequence[tuple[int, ...]]
) -> np.ndarray:
    if L > TABULAR_MAX_L or vocab.size > TABULAR_MAX_V:
        raise ConfigError("instance too large for a tabular joint")
    joint = np.zeros((vocab.size,) * L, dtype=np.float64)
    for seq in support:
        joint[seq] = 1.0
    total = joint.sum()
    if total == 0:
        raise ConfigError("empty support: no valid sequences")
    return joint / total


# --- generators --------------------------------------------------------------

def gen_bracket_task(
    depth: int,
    L: int,
    rng: Optional[np.random.Generator] = None,
    types: int = 2,
    with_joint: bool = True,
    seed: int = 0,
) -> TaskInstance:
    """Uniform distribution over balanced typed bracket strings."""
    if L % 2 != 0:
        raise ConfigError("bracket task requires even L")
    if depth < 1 or types < 1:
        raise ConfigError("depth and types must be >= 1")
    vocab = Vocab(size=2 * types)
    joint = None
    if with_joint:
        support = enumerate_bracket_strings(L, types, depth)
        if not support:
            raise ConfigError(f"no balanced strings for depth={depth}, L={L}")
        joint = _uniform_joint(vocab, L, support)
    return TaskInstance(
        kind="bracket",
        vocab=vocab,
        prompt=(),
        L=L,
        seed=seed,
        meta={"types": types, "depth": depth},
        joint=joint,
    )


def gen_binding_task(
    nvars: int,
    L: int,
    rng: Optional[np.random.Generator] = None,
    with_joint: bool = True,
    seed: int = 0,
) -> TaskInstance:
    """Uniform distribution over define-before-use sequences."""
    if nvars < 1 or L < 1:
        raise ConfigError("vars and L must be >= 1")
    vocab = Vocab(size=2 * nvars)
    joint = None
    if with_joint:
        support = enumerate_binding_strings(L, nvars)
        joint = _uniform_joint(vocab, L, support)
    return TaskInstance(
        kind="binding",
        vocab=vocab,
        prompt=(),
        L=L,
        seed=seed,
        meta={"vars": nvars},
        joint=joint,
    )


# --- trap planting -----------------------------------------------------------

def _find_trap_patterns(support: list[tuple[int, ...]], L: int):
    """All (anchor, j, k, s1, s2, s3) pattern tuples in the support.

    Requirements: s1 and s2 agree everywhere except a swapped token pair at
    (j, k); s3 agrees with them everywhere outside {anchor, j, k}, differs
    at the anchor, and carries the pair's smaller token at both j and k.
    The smaller-token condition is what makes greedy tie-breaking commit
    the jointly-impossible pair.
    """
    patterns = []
    for j, k in itertools.combinations(range(L), 2):
        for anchor in range(L):
            if anchor in (j, k):
                continue
            rest = [p for p in range(L) if p not in (anchor, j, k)]
            groups: dict[tuple, list[tuple[int, ...]]] = {}
            for seq in support:
                groups.setdefault(tuple(seq[p] for p in rest), []).append(seq)
            for members in groups.values():
                for s1, s2 in itertools.combinations(members, 2):
                    if s1[anchor] != s2[anchor]:
                        continue
                    if s1[j] != s2[k] or s1[k] != s2[j] or s1[j] == s1[k]:
                        continue
                    x = min(s1[j], s1[k])
                    for s3 in members:
                        if s3[anchor] == s1[anchor]:
                            continue
                        if s3[j] == x and s3[k] == x:
                            patterns.append((anchor, j, k, s1, s2, s3))
    return patterns


def _simulate_adversarial_decode(
    model: TabularJointModel, trap: dict, L: int, vocab: Vocab
) -> tuple[int, ...]:
    """Greedy decode in the adversarial group order, parallel within groups."""
    from .state import new_state

    state = new_state(vocab, (), L)
    for group in trap["order"]:
        if not group:
            continue
        dists = model.distributions(state, group)
        tokens = [dists[p].argmax() for p in group]
        state = state.with_tokens(group, tokens)
    return state.response


def plant_early_trap(
    instance: TaskInstance,
    rng: np.random.Generator,
    max_iter: int = 1000,
) -> TaskInstance:
    """Reweight the instance's joint so early greedy commitment provably fails.

    The reweighted joint concentrates on three support sequences: two that
    share the anchor token but swap a token pair, and one that resolves the
    pair unambiguously under a different anchor token. Decoding the anchor
    first and the pair in one parallel step then commits an off-support
    combination; a single fresh-context probe of either pair position
    exposes and fixes it. Construction is verified by enumeration; if no
    pattern satisfies all checks within ``max_iter`` attempts the instance
    is rejected loudly.
    """
    if instance.joint is None:
        raise ConfigError("trap planting requires a tabular joint")
    support = instance.support()
    L = instance.L
    patterns = _find_trap_patterns(support, L)
    if not patterns:
        raise ConfigError(
            "no trap pattern in support (independent or too-rigid joint)"
        )
    order = rng.permutation(len(patterns))
    for attempt in range(min(max_iter, len(patterns))):
        anchor, j, k, s1, s2, s3 = patterns[order[attempt]]
        w = float(rng.uniform(0.48, 0.495))
        size = instance.joint.size
        joint = np.full_like(instance.joint, SMOOTHING_TOTAL / size)
        joint[s1] += w
        joint[s2] += w
        joint[s3] += 1.0 - 2.0 * w
        joint = joint / joint.sum()
        rest = [p for p in range(L) if p not in (anchor, j, k)]
        trap = {
            "position": anchor,
            "sparse_argmax": int(s1[anchor]),
            "full_argmax": int(s3[anchor]),
            "pair": [j, k],
            "order": [[anchor], rest, [j, k]],
            "support": [list(s1), list(s2), list(s3)],
        }
        candidate = TaskInstance(
            kind="trap",
            vocab=instance.vocab,
            prompt=instance.prompt,
            L=L,
            seed=instance.seed,
            meta=dict(instance.meta, planted_from=instance.kind),
            joint=joint,
            trap=trap,
        )
        if _verify_trap(candidate):
            return candidate
    raise ConfigError(
        f"no trap construction verified within {min(max_iter, len(patterns))} attempts"
    )


def _verify_trap(task: TaskInstance) -> bool:
    """Enumeration checks: sparse/full argmax disagree at the trap position,
    the adversarial greedy decode is invalid, and a single-position probe
    revision can restore validity."""
    from .state import new_state

    model = task.model()
    trap = task.trap
    anchor = trap["position"]
    vocab = task.vocab
    L = task.L

    # Sparse context: marginal at the anchor with everything masked.
    blank = new_state(vocab, task.prompt, L)
    sparse = model.conditional(blank, anchor).argmax()
    if sparse != trap["sparse_argmax"]:
        return False

    # Full context: condition on the disambiguating branch everywhere else.
    s3 = tuple(trap["support"][2])
    others = [p for p in range(L) if p != anchor]
    full_state = blank.with_tokens(others, [s3[p] for p in others])
    full = model.conditional(full_state, anchor).argmax()
    if full != trap["full_argmax"] or full == sparse:
        return False

    # Adversarial greedy decode must exit the support.
    checker = task.checker()
    decoded = _simulate_adversarial_decode(model, trap, L, vocab)
    if checker(decoded):
        return False

    # A correct single-position revision must exist.
    from .state import apply_mask_subset

    final = blank.with_tokens(range(L), decoded)
    for pos in range(L):
        perturbed = apply_mask_subset(final, (pos,))
        repl = model.conditional(perturbed, pos).argmax()
        fixed = list(decoded)
        fixed[pos] = repl
        if checker(fixed):
            return True
    return False
