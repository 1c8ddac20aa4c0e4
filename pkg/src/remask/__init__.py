"""Decoding engine for masked diffusion sequence models.

Implements iterative unmasking with inference-time token revision: a
context-robust remasking strategy that stress-tests committed tokens under
perturbed contexts, plus confidence-cache and compute-matched control
baselines, an exact tabular oracle for every algorithmic claim, and a
synthetic task generator with provable planted traps.
"""

from .denoiser import (
    Categorical,
    DenoiserBackend,
    NGramBackend,
    RemoteBackend,
    TabularJointModel,
    predict,
    tabular_conditional,
)
from .harness import RunReport, compare, histogram_report, mcnemar_exact, run
from .oracle import (
    WorstCaseReport,
    certify_lower_bound,
    dro_objective,
    dro_objective_exact,
    dro_objective_mc,
    exhaustive_worst_case,
    sample_perturbed_context,
)
from .reviser import (
    ConfidenceCache,
    core_apply,
    core_probe,
    remdm_conf_step,
    revision_active,
    select_candidates_margin,
    soft_pi,
)
from .state import (
    DecodeConfig,
    SeqState,
    Vocab,
    apply_mask_subset,
    new_state,
    unmasked_response_positions,
)
from .taskgen import TaskInstance, gen_binding_task, gen_bracket_task, plant_early_trap
from .trace import RunTrace
from .unmasker import commit, schedule_k, select_low_confidence, select_topk_margin

__version__ = "0.1.0"

__all__ = [
    "Categorical",
    "ConfidenceCache",
    "DecodeConfig",
    "DenoiserBackend",
    "NGramBackend",
    "RemoteBackend",
    "RunReport",
    "RunTrace",
    "SeqState",
    "TabularJointModel",
    "TaskInstance",
    "Vocab",
    "WorstCaseReport",
    "apply_mask_subset",
    "certify_lower_bound",
    "commit",
    "compare",
    "core_apply",
    "core_probe",
    "dro_objective",
    "dro_objective_exact",
    "dro_objective_mc",
    "exhaustive_worst_case",
    "gen_binding_task",
    "gen_bracket_task",
    "histogram_report",
    "mcnemar_exact",
    "new_state",
    "plant_early_trap",
    "predict",
    "remdm_conf_step",
    "revision_active",
    "run",
    "sample_perturbed_context",
    "schedule_k",
    "select_candidates_margin",
    "select_low_confidence",
    "select_topk_margin",
    "soft_pi",
    "tabular_conditional",
    "unmasked_response_positions",
]
