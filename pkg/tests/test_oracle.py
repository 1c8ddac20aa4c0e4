import itertools

import numpy as np
import pytest

from conftest import random_joint
from remask.denoiser import TabularJointModel
from remask.errors import EnumerationCapError, PreconditionError
from remask.oracle import (
    certify_lower_bound,
    count_feasible_subsets,
    dro_objective,
    dro_objective_exact,
    dro_objective_mc,
    exhaustive_worst_case,
    instability_under_subset,
    sample_perturbed_context,
    _subsets_bitmask,
    _subsets_combinations,
)
from remask.state import Vocab, new_state
from test_denoiser import make_joint_from_support


def random_committed_state(rng, vocab, L, n_unmasked):
    positions = sorted(rng.choice(L, size=n_unmasked, replace=False).tolist())
    tokens = [int(rng.integers(0, vocab.size)) for _ in positions]
    return new_state(vocab, (), L).with_tokens(positions, tokens)


class TestEnumerators:
    def test_families_agree_and_count_matches(self, rng):
        for _ in range(30):
            n = int(rng.integers(1, 9))
            candidates = sorted(
                rng.choice(20, size=n, replace=False).tolist()
            )
            m = int(rng.integers(1, n + 1))
            j = int(rng.choice(candidates))
            a = sorted(
                _subsets_combinations(candidates, m, j), key=lambda s: (len(s), s)
            )
            b = _subsets_bitmask(candidates, m, j)
            assert a == b
            assert len(a) == count_feasible_subsets(n, m)
            assert all(j in s and len(s) <= m for s in a)

    def test_cap_refuses_instead_of_sampling(self):
        vocab = Vocab(size=2)
        joint = np.full((2,) * 6, 1 / 64)
        model = TabularJointModel(vocab, joint)
        state = new_state(vocab, (), 6).with_tokens(range(6), [0] * 6)
        with pytest.raises(EnumerationCapError):
            exhaustive_worst_case(state, 0, range(6), 4, model, cap=3)

    def test_j_must_be_a_candidate(self):
        vocab = Vocab(size=2)
        model = TabularJointModel(vocab, np.full((2, 2), 0.25))
        state = new_state(vocab, (), 2).with_tokens(range(2), [0, 0])
        with pytest.raises(PreconditionError):
            exhaustive_worst_case(state, 1, [0], 1, model)


class TestWorstCase:
    def test_m_equals_one_is_singleton_probe(self, rng):
        """With m=1 the only feasible subset is {j} itself."""
        vocab = Vocab(size=3)
        joint = random_joint(rng, 3, 4)
        model = TabularJointModel(vocab, joint)
        state = random_committed_state(rng, vocab, 4, 3)
        committed = [p for p in range(4) if state.response[p] != vocab.mask_id]
        for j in committed:
            worst, subset = exhaustive_worst_case(state, j, committed, 1, model)
            assert subset == (j,)
            direct = instability_under_subset(state, (j,), model)[j]
            assert worst == pytest.approx(direct, abs=1e-12)

    def test_independent_joint_makes_context_irrelevant(self, rng):
        """Under a product joint, masking extra positions never changes
        the conditional at j, so every feasible subset scores the same."""
        V, L = 3, 4
        vocab = Vocab(size=V)
        marginals = [rng.uniform(0.2, 1, V) for _ in range(L)]
        marginals = [p / p.sum() for p in marginals]
        joint = np.ones((V,) * L)
        for axis, p in enumerate(marginals):
            shape = [1] * L
            shape[axis] = V
            joint = joint * p.reshape(shape)
        model = TabularJointModel(vocab, joint)
        state = new_state(vocab, (), L).with_tokens(range(L), [0, 1, 2, 0])
        for j in range(L):
            worst, _ = exhaustive_worst_case(state, j, range(L), 3, model)
            base = instability_under_subset(state, (j,), model)[j]
            assert worst == pytest.approx(base, abs=1e-9)

    def test_larger_pool_strictly_worse_on_correlated_joint(self):
        vocab = Vocab(size=2)
        joint = make_joint_from_support(2, 2, {(0, 0): 0.75, (1, 1): 0.25})
        model = TabularJointModel(vocab, joint)
        state = new_state(vocab, (), 2).with_tokens(range(2), [0, 0])
        solo, _ = exhaustive_worst_case(state, 0, [0, 1], 1, model)
        pair, maximizer = exhaustive_worst_case(state, 0, [0, 1], 2, model)
        assert solo == pytest.approx(0.0, abs=1e-9)
        assert pair == pytest.approx(-np.log(0.75), abs=1e-9)
        assert maximizer == (0, 1)

    def test_certify_holds_on_random_states(self, rng):
        for _ in range(25):
            V = int(rng.integers(2, 5))
            L = int(rng.integers(3, 6))
            vocab = Vocab(size=V)
            model = TabularJointModel(vocab, random_joint(rng, V, L))
            n_committed = int(rng.integers(2, L + 1))
            state = random_committed_state(rng, vocab, L, n_committed)
            committed = [
                p for p in range(L) if state.response[p] != vocab.mask_id
            ]
            m = int(rng.integers(1, min(3, len(committed)) + 1))
            size = int(rng.integers(1, m + 1))
            subset = sorted(
                rng.choice(committed, size=size, replace=False).tolist()
            )
            report = certify_lower_bound(state, subset, committed, m, model)
            assert report.ok
            assert report.to_dict()["ok"] is True

    def test_oversized_subset_rejected(self, rng):
        vocab = Vocab(size=2)
        model = TabularJointModel(vocab, random_joint(rng, 2, 3))
        state = new_state(vocab, (), 3).with_tokens(range(3), [0, 1, 0])
        with pytest.raises(PreconditionError):
            certify_lower_bound(state, [0, 1], [0, 1, 2], 1, model)


class TestSampling:
    def test_mask_respects_candidate_pool(self, rng):
        vocab = Vocab(size=2)
        state = new_state(vocab, (), 5).with_tokens(range(5), [0] * 5)
        for _ in range(200):
            z, perturbed = sample_perturbed_context(
                state, [1, 3], np.array([0.5, 0.5]), rng
            )
            assert z[0] == z[2] == z[4] == 0
            for p in range(5):
                masked = perturbed.response[p] == vocab.mask_id
                assert masked == bool(z[p])

    def test_marginal_frequencies(self, rng):
        vocab = Vocab(size=2)
        state = new_state(vocab, (), 3).with_tokens(range(3), [0] * 3)
        pi = np.array([0.2, 0.7, 1.0])
        n = 4000
        zs = np.array([
            sample_perturbed_context(state, [0, 1, 2], pi, rng)[0]
            for _ in range(n)
        ])
        freq = zs.mean(axis=0)
        for k in range(3):
            sigma = np.sqrt(max(pi[k] * (1 - pi[k]), 1e-12) / n)
            assert abs(freq[k] - pi[k]) <= 3 * sigma + 1e-12

    def test_bad_pi_rejected(self, rng):
        vocab = Vocab(size=2)
        state = new_state(vocab, (), 2).with_tokens(range(2), [0, 0])
        with pytest.raises(PreconditionError):
            sample_perturbed_context(state, [0, 1], np.array([0.5]), rng)
        with pytest.raises(PreconditionError):
            sample_perturbed_context(state, [0, 1], np.array([0.5, 1.2]), rng)


class TestDroObjective:
    def make_instance(self, rng, n_candidates):
        V, L = 3, 5
        vocab = Vocab(size=V)
        model = TabularJointModel(vocab, random_joint(rng, V, L))
        state = random_committed_state(rng, vocab, L, n_candidates)
        committed = [p for p in range(L) if state.response[p] != vocab.mask_id]
        return model, state, committed

    def test_exact_matches_hand_enumeration(self, rng):
        model, state, cands = self.make_instance(rng, 3)
        pi = rng.uniform(0.1, 0.9, 3)
        got = dro_objective_exact(state, cands, pi, model)
        want = 0.0
        for subset_bits in itertools.product([0, 1], repeat=3):
            subset = [c for c, b in zip(cands, subset_bits) if b]
            w = np.prod([p if b else 1 - p for p, b in zip(pi, subset_bits)])
            if subset:
                ells = instability_under_subset(state, subset, model)
                w *= np.mean([ells[i] for i in subset])
            else:
                w = 0.0
            want += w
        assert got == pytest.approx(want, abs=1e-12)

    def test_point_mass_pi_reduces_to_one_subset(self, rng):
        model, state, cands = self.make_instance(rng, 3)
        pi = np.array([1.0, 0.0, 1.0])
        got = dro_objective_exact(state, cands, pi, model)
        subset = [cands[0], cands[2]]
        ells = instability_under_subset(state, subset, model)
        assert got == pytest.approx(np.mean(list(ells.values())), abs=1e-12)

    def test_mc_within_three_se_of_exact(self, rng):
        model, state, cands = self.make_instance(rng, 4)
        pi = rng.uniform(0.2, 0.8, 4)
        exact = dro_objective_exact(state, cands, pi, model)
        mean, se = dro_objective_mc(state, cands, pi, model, 100_000, rng)
        assert abs(mean - exact) <= 3 * se + 1e-12

    def test_dispatcher_routes(self, rng):
        model, state, cands = self.make_instance(rng, 2)
        pi = np.array([0.5, 0.5])
        exact = dro_objective(state, cands, pi, model)
        assert exact == pytest.approx(
            dro_objective_exact(state, cands, pi, model)
        )
        mc = dro_objective(state, cands, pi, model, samples=20_000, rng=rng)
        assert abs(mc - exact) < 0.2

    def test_exact_cap(self, rng):
        vocab = Vocab(size=2)
        model = TabularJointModel(vocab, random_joint(rng, 2, 2))
        state = new_state(vocab, (), 2).with_tokens(range(2), [0, 0])
        with pytest.raises(EnumerationCapError):
            dro_objective_exact(state, list(range(17)), np.full(17, 0.5), model)
