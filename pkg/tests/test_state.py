import pytest
from hypothesis import given, strategies as st

from remask.errors import ConfigError, PreconditionError
from remask.state import (
    DecodeConfig,
    Vocab,
    apply_mask_subset,
    new_state,
    unmasked_response_positions,
)


V = Vocab(size=10)


class TestNewState:
    def test_initializes_all_masked(self):
        state = new_state(V, [3, 1], 4)
        assert state.response == (V.mask_id,) * 4
        assert state.prompt == (3, 1)
        assert state.step == 1

    def test_empty_prompt(self):
        state = new_state(V, [], 1)
        assert state.response == (V.mask_id,)

    def test_out_of_range_prompt_token(self):
        with pytest.raises(ConfigError):
            new_state(V, [V.size], 2)

    def test_nonpositive_length(self):
        with pytest.raises(ConfigError):
            new_state(V, [], 0)


class TestUnmaskedPositions:
    def test_direct_readoff(self):
        state = new_state(V, [], 4).with_tokens([1, 3], [5, 2])
        assert unmasked_response_positions(state) == (1, 3)

    def test_all_masked(self):
        assert unmasked_response_positions(new_state(V, [], 3)) == ()

    def test_fully_decoded(self):
        state = new_state(V, [], 4).with_tokens(range(4), [0, 1, 2, 3])
        assert unmasked_response_positions(state) == (0, 1, 2, 3)


class TestApplyMaskSubset:
    def test_single_position(self):
        state = new_state(V, [], 3).with_tokens([0, 1, 2], [7, 5, 9])
        out = apply_mask_subset(state, [1])
        assert out.response == (7, V.mask_id, 9)
        assert state.response == (7, 5, 9)  # value semantics

    def test_empty_subset_is_identity(self):
        state = new_state(V, [], 3).with_tokens([0], [7])
        assert apply_mask_subset(state, []).response == state.response

    def test_already_masked_is_error(self):
        state = new_state(V, [], 3)
        with pytest.raises(PreconditionError):
            apply_mask_subset(state, [0])

    @given(st.data())
    def test_disjoint_masking_commutes(self, data):
        L = data.draw(st.integers(2, 8))
        tokens = data.draw(st.lists(st.integers(0, 9), min_size=L, max_size=L))
        state = new_state(V, [], L).with_tokens(range(L), tokens)
        subset_a = data.draw(st.sets(st.integers(0, L - 1)))
        subset_b = data.draw(
            st.sets(st.integers(0, L - 1).filter(lambda i: i not in subset_a))
        )
        sequential = apply_mask_subset(
            apply_mask_subset(state, sorted(subset_a)), sorted(subset_b)
        )
        combined = apply_mask_subset(state, sorted(subset_a | subset_b))
        assert sequential.response == combined.response


class TestDecodeConfig:
    def test_defaults_are_canonical(self):
        cfg = DecodeConfig()
        assert (cfg.N, cfg.L, cfg.E, cfg.m, cfg.k_rm) == (128, 512, 8, 32, 1)
        assert (cfg.gamma_s, cfg.gamma_e) == (0.25, 0.75)

    def test_krm_must_not_exceed_m(self):
        with pytest.raises(ConfigError):
            DecodeConfig(m=2, k_rm=3)

    def test_window_order(self):
        with pytest.raises(ConfigError):
            DecodeConfig(gamma_s=0.75, gamma_e=0.25)

    def test_round_trip(self):
        cfg = DecodeConfig(N=16, L=8, reviser="core")
        assert DecodeConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            DecodeConfig.from_dict({"bogus": 1})
