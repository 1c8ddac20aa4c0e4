"""Shared fixtures and independent brute-force oracles for the test suite.

The enumeration helpers here are deliberately written in plain Python loops,
independent of the package's numpy marginalization path, so they can serve
as a second route for every conditional-probability check.
"""

import itertools

import numpy as np
import pytest

from remask.state import SeqState, Vocab, new_state


def random_joint(rng, V, L):
    """Random strictly-positive normalized joint table."""
    joint = rng.uniform(0.05, 1.0, size=(V,) * L)
    return joint / joint.sum()


def random_partial_state(rng, vocab, L, joint=None, n_unmasked=None):
    """A state with a random subset of committed positions.

    When a joint is given, committed tokens are taken from a random support
    sequence so the state always has positive mass.
    """
    state = new_state(vocab, (), L)
    if n_unmasked is None:
        n_unmasked = int(rng.integers(0, L + 1))
    if n_unmasked == 0:
        return state
    positions = sorted(rng.choice(L, size=n_unmasked, replace=False).tolist())
    if joint is not None:
        flat = int(rng.choice(joint.size, p=joint.reshape(-1)))
        ref = np.unravel_index(flat, joint.shape)
        tokens = [int(ref[p]) for p in positions]
    else:
        tokens = [int(rng.integers(0, vocab.size)) for _ in positions]
    return state.with_tokens(positions, tokens)


def brute_force_conditional(joint, response, mask_id, i):
    """p(v at i | committed slots) by plain enumeration over completions."""
    V = joint.shape[0]
    L = joint.ndim
    masked = [p for p in range(L) if response[p] == mask_id]
    assert i in masked
    totals = [0.0 for _ in range(V)]
    for completion in itertools.product(range(V), repeat=len(masked)):
        seq = list(response)
        for p, v in zip(masked, completion):
            seq[p] = v
        totals[seq[i]] += joint[tuple(seq)]
    z = sum(totals)
    assert z > 0, "state has zero mass"
    return [x / z for x in totals]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One verdict line per acceptance criterion, echoed after the test summary so
# capture never hides them.
ACCEPTANCE_VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)
