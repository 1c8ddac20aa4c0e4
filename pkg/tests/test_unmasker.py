import numpy as np
import pytest
from hypothesis import given, strategies as st

from remask.denoiser import Categorical
from remask.errors import PreconditionError
from remask.state import Vocab, new_state
from remask.trace import RunTrace, Unmask
from remask.unmasker import (
    commit,
    schedule_k,
    select_forced,
    select_low_confidence,
    select_topk_margin,
)


def dist(*probs):
    return Categorical.from_probs(np.array(probs, dtype=np.float64))


class TestScheduleK:
    def test_canonical_regime_is_constant(self):
        assert all(schedule_k(t, 128, 512) == 4 for t in range(1, 129))

    def test_remainder_goes_to_earliest_steps(self):
        ks = [schedule_k(t, 4, 10) for t in range(1, 5)]
        assert ks == [3, 3, 2, 2]

    def test_fewer_positions_than_steps(self):
        ks = [schedule_k(t, 5, 3) for t in range(1, 6)]
        assert ks == [1, 1, 1, 0, 0]

    def test_step_out_of_range(self):
        with pytest.raises(PreconditionError):
            schedule_k(0, 4, 8)

    @given(st.integers(1, 40), st.integers(0, 200))
    def test_quotas_sum_to_length(self, N, L):
        assert sum(schedule_k(t, N, L) for t in range(1, N + 1)) == L


class TestSelection:
    def test_low_confidence_ranks_by_max_prob(self):
        dists = {0: dist(0.5, 0.5), 1: dist(0.9, 0.1), 2: dist(0.2, 0.8)}
        plan = select_low_confidence(1, dists, 2)
        assert plan.positions == (1, 2)
        assert plan.tokens == (0, 1)
        assert plan.probs == pytest.approx((0.9, 0.8))

    def test_topk_margin_ranks_by_gap(self):
        dists = {0: dist(0.5, 0.5), 1: dist(0.6, 0.4), 2: dist(0.55, 0.45)}
        plan = select_topk_margin(1, dists, 1)
        assert plan.positions == (1,)

    def test_score_tie_breaks_to_lowest_position(self):
        dists = {2: dist(0.7, 0.3), 5: dist(0.7, 0.3)}
        plan = select_low_confidence(1, dists, 1)
        assert plan.positions == (2,)

    def test_k_clamps_to_available(self):
        plan = select_low_confidence(1, {0: dist(1.0, 0.0)}, 5)
        assert plan.positions == (0,)

    def test_forced_follows_given_order(self):
        dists = {0: dist(0.1, 0.9), 1: dist(0.8, 0.2)}
        plan = select_forced(1, dists, [1, 0])
        assert plan.positions == (1, 0)
        assert plan.tokens == (0, 1)

    def test_forced_missing_distribution_is_error(self):
        with pytest.raises(PreconditionError):
            select_forced(1, {0: dist(1.0, 0.0)}, [3])

    def test_temperature_sampling_is_seeded(self):
        dists = {0: dist(0.5, 0.5), 1: dist(0.4, 0.6)}
        a = select_low_confidence(
            1, dists, 2, temperature=1.0, rng=np.random.default_rng(7)
        )
        b = select_low_confidence(
            1, dists, 2, temperature=1.0, rng=np.random.default_rng(7)
        )
        assert a == b


class TestCommit:
    def test_commit_writes_tokens_and_logs(self):
        vocab = Vocab(size=2)
        state = new_state(vocab, (), 3)
        plan = select_low_confidence(
            1, {0: dist(0.3, 0.7), 2: dist(0.9, 0.1)}, 2
        )
        trace = RunTrace()
        out = commit(plan, state, trace)
        assert out.response == (1, vocab.mask_id, 0)
        assert state.response == (vocab.mask_id,) * 3
        events = [ev for ev in trace.events if isinstance(ev, Unmask)]
        assert len(events) == 1 and events[0].positions == (2, 0)

    def test_commit_rejects_occupied_position(self):
        vocab = Vocab(size=2)
        state = new_state(vocab, (), 2).with_tokens([0], [1])
        plan = select_low_confidence(1, {0: dist(1.0, 0.0)}, 1)
        with pytest.raises(PreconditionError):
            commit(plan, state)

    def test_empty_plan_is_identity_and_silent(self):
        vocab = Vocab(size=2)
        state = new_state(vocab, (), 2)
        trace = RunTrace()
        out = commit(select_low_confidence(1, {}, 0), state, trace)
        assert out is state
        assert trace.events == []
