import numpy as np
import pytest

from remask.errors import BudgetMismatchError, ConfigError, PreconditionError
from remask.harness import (
    build_backend,
    compare,
    histogram_report,
    mcnemar_exact,
    run,
)
from remask.state import DecodeConfig
from remask.taskgen import gen_binding_task, plant_early_trap


def trap_task(seed=0, L=4):
    rng = np.random.default_rng(seed)
    return plant_early_trap(gen_binding_task(2, L, rng), rng)


def trap_config(**kw):
    base = dict(
        N=5, L=4, gamma_s=0.5, gamma_e=1.0, E=1, m=1, k_rm=1,
        unmasker="forced", reviser="core", seed=0,
    )
    base.update(kw)
    return DecodeConfig(**base)


class TestBudgetLaw:
    def test_canonical_nfe_is_136(self):
        task = gen_binding_task(2, 6)
        cfg = DecodeConfig(N=128, L=6, reviser="core", unmasker="low_confidence")
        rep = run(cfg, task)
        assert rep.nfe == 136
        assert rep.base_passes == 128 and rep.revision_passes == 8
        steps = rep.trace.revision_pass_steps()
        assert steps == (32, 40, 48, 56, 64, 72, 80, 88)

    def test_no_revision_is_128(self):
        task = gen_binding_task(2, 6)
        cfg = DecodeConfig(N=128, L=6, reviser="none", unmasker="low_confidence")
        rep = run(cfg, task)
        assert rep.nfe == 128 and rep.revision_passes == 0

    def test_controls_are_compute_matched(self):
        task = gen_binding_task(2, 6)
        nfes = set()
        for reviser in ("core", "random", "margin"):
            cfg = DecodeConfig(
                N=128, L=6, reviser=reviser, unmasker="low_confidence"
            )
            nfes.add(run(cfg, task).nfe)
        assert nfes == {136}


class TestRunOutcomes:
    def test_trap_core_fixes_what_base_breaks(self):
        task = trap_task()
        base = run(trap_config(reviser="none"), task)
        core = run(trap_config(reviser="core"), task)
        assert base.valid is False
        assert core.valid is True
        assert core.revised_changed >= 1
        assert core.loglik is not None and core.loglik > base.loglik

    def test_final_state_never_contains_mask(self):
        for reviser in ("none", "core", "remdm_conf"):
            cfg = DecodeConfig(
                N=6, L=4, gamma_s=0.3, gamma_e=1.0, E=1, m=2, k_rm=1,
                unmasker="low_confidence", reviser=reviser, seed=3,
            )
            task = gen_binding_task(2, 4)
            rep = run(cfg, task)
            assert task.vocab.mask_id not in rep.final_response

    def test_remdm_conservation(self):
        cfg = DecodeConfig(
            N=8, L=6, gamma_s=0.25, gamma_e=0.9, E=2, m=2, k_rm=1,
            unmasker="low_confidence", reviser="remdm_conf", seed=5,
        )
        task = gen_binding_task(2, 6)
        rep = run(cfg, task)
        assert rep.remask_positions > 0  # the stage actually fired
        assert rep.unmask_positions == cfg.L + rep.remask_positions
        assert rep.nfe == cfg.N  # no auxiliary passes

    def test_remdm_psi_caches_commit_probability(self):
        cfg = DecodeConfig(
            N=4, L=4, gamma_s=0.0, gamma_e=1.0, E=2, m=2, k_rm=1,
            unmasker="low_confidence", reviser="remdm_conf", seed=1,
        )
        task = gen_binding_task(2, 4)
        rep = run(cfg, task)
        assert set(rep.psi) == set(range(4))
        assert all(0.0 < v <= 1.0 for v in rep.psi.values())

    def test_reproducibility_is_byte_exact(self):
        task = trap_task(seed=4)
        a = run(trap_config(seed=9), task)
        b = run(trap_config(seed=9), task)
        assert a.to_json() == b.to_json()
        assert a.trace.to_jsonl() == b.trace.to_jsonl()

    def test_forced_unmasker_needs_trap_order(self):
        task = gen_binding_task(2, 4)
        with pytest.raises(ConfigError):
            run(trap_config(), task)

    def test_prompt_and_masked_positions_untouched(self):
        task = trap_task(seed=6)
        rep = run(trap_config(reviser="core"), task)
        for ev in rep.trace.events:
            if hasattr(ev, "positions"):
                assert all(0 <= p < task.L for p in ev.positions)
        assert all(0 <= tok < task.vocab.size for tok in rep.final_response)


class TestBackendFactory:
    def test_tabular_and_ngram(self):
        task = gen_binding_task(2, 4)
        assert build_backend("tabular", task) is not None
        assert build_backend("ngram", task, seed=2) is not None

    def test_unknown_spec(self):
        with pytest.raises(ConfigError):
            build_backend("mystery", gen_binding_task(2, 4))


class TestMcnemar:
    def test_closed_form_values(self):
        assert mcnemar_exact(7, 2) == pytest.approx(0.1796875, abs=1e-12)
        assert mcnemar_exact(0, 10) == pytest.approx(2 / 1024, abs=1e-12)
        assert mcnemar_exact(10, 0) == mcnemar_exact(0, 10)
        assert mcnemar_exact(0, 0) == 1.0
        assert mcnemar_exact(5, 5) == 1.0

    def test_negative_counts_rejected(self):
        with pytest.raises(PreconditionError):
            mcnemar_exact(-1, 0)


class TestCompare:
    def test_self_comparison_is_null(self):
        tasks = [trap_task(seed=s) for s in (0, 1)]
        cfg = trap_config(reviser="core")
        table = compare({"a": cfg, "b": cfg}, tasks, seeds=[0])
        pair = table["pairwise"]["a|b"]
        assert pair == {"b": 0, "c": 0, "p": 1.0}
        assert table["methods"]["a"] == table["methods"]["b"]

    def test_budget_mismatch_raises_unless_annotated(self):
        tasks = [trap_task()]
        configs = {
            "core": trap_config(reviser="core"),
            "base": trap_config(reviser="none"),
        }
        with pytest.raises(BudgetMismatchError):
            compare(configs, tasks, seeds=[0])
        table = compare(configs, tasks, seeds=[0], annotate_budgets=True)
        assert table["budgets_annotated"]
        assert table["methods"]["core"]["validity_rate"] == 1.0
        assert table["methods"]["base"]["validity_rate"] == 0.0
        assert table["pairwise"]["core|base"]["p"] == pytest.approx(1.0)

    def test_empty_task_set_rejected(self):
        with pytest.raises(ConfigError):
            compare({"a": trap_config()}, [], seeds=[0])

    def test_outcomes_are_paired_per_instance(self):
        tasks = [trap_task(seed=s) for s in (0, 1, 2)]
        configs = {
            "core": trap_config(reviser="core"),
            "rand": trap_config(reviser="random"),
        }
        table = compare(configs, tasks, seeds=[0, 1])
        assert len(table["outcomes"]["core"]) == 6
        assert len(table["outcomes"]["rand"]) == 6


class TestHistogram:
    def test_split_histogram_and_quantiles(self):
        reports = [run(trap_config(reviser="core"), trap_task(seed=s))
                   for s in range(3)]
        out = histogram_report(reports, bins=10)
        lines = out["csv"].strip().splitlines()
        assert lines[0] == "bin_lo,bin_hi,revised,unchanged"
        assert len(lines) == 11
        q = out["quantiles"]
        assert q["revised"]["count"] >= 1
        assert q["revised"]["median"] > q["unchanged"]["median"]

    def test_no_probe_warning(self):
        rep = run(trap_config(reviser="none"), trap_task())
        out = histogram_report([rep])
        assert out["warning"] == "no probes recorded"
