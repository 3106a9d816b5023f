from .decomposed import SUPPORTED, DecomposedTensor, batched_apply, rule_add, rule_interaction, rule_linear
from .forward import (
    Attribution,
    PlayerPartition,
    decompose_forward,
    decompose_logits,
    initial_embedding,
    render_text,
)
from .methods import AttributionMethod, CDPairwise, Exact, Sampling, make_method, method_json
from .shapley import (
    EXACT_CAP,
    CoalitionPlan,
    cd_pairwise,
    cd_plan,
    exact_plan,
    exact_shapley,
    permutation_plan,
    sampled_shapley,
    sampling_plan,
)

__all__ = [
    "SUPPORTED", "DecomposedTensor", "batched_apply", "rule_add", "rule_interaction", "rule_linear",
    "Attribution", "PlayerPartition", "decompose_forward", "decompose_logits", "initial_embedding", "render_text",
    "AttributionMethod", "CDPairwise", "Exact", "Sampling", "make_method", "method_json",
    "EXACT_CAP", "CoalitionPlan", "cd_pairwise", "cd_plan", "exact_plan", "exact_shapley", "permutation_plan",
    "sampled_shapley", "sampling_plan",
]
