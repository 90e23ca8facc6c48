"""Block-sparse transformer prefill with segment-wise criticality estimation.

Public surface: the dense reference attention, the segment-wise
criticality estimator with its exact token-wise counterpart, budgeted
block-sparse attention, a multi-layer prefill simulator with a portable
on-disk model format, analytic FLOP accounting, and the `sparseprefill`
command-line harness.
"""

from .attn_core import (
    AttentionOutput,
    ConfigError,
    HeadGeometry,
    MaskedRowError,
    dense_causal_attention,
    default_scale,
    multi_head_dense_attention,
    project,
    softmax_rows,
    split_heads,
)
from .criticality import (
    CriticalityMatrix,
    CriticalSet,
    SegmentRepresentatives,
    estimate_criticality,
    exact_critical_set,
    fuse_scores,
    locality_matrix,
    locality_overlap,
    locality_summary,
    segment_representatives,
)
from .flops import FlopReport, count_flops
from .pipeline import (
    LayerWeights,
    ModelBundle,
    ModelLoadError,
    PrefillResult,
    gen_synthetic_inputs,
    gen_synthetic_model,
    load_model,
    prefill,
    save_model,
)
from .pruned_attn import (
    BlockSelection,
    PrunedAttnConfig,
    dense_fallback_policy,
    pruned_attention,
    select_blocks,
)
from .rng import RngSpec, SplitMix64

__version__ = "0.1.0"

__all__ = [
    "AttentionOutput",
    "BlockSelection",
    "ConfigError",
    "CriticalityMatrix",
    "CriticalSet",
    "FlopReport",
    "HeadGeometry",
    "LayerWeights",
    "MaskedRowError",
    "ModelBundle",
    "ModelLoadError",
    "PrefillResult",
    "PrunedAttnConfig",
    "RngSpec",
    "SegmentRepresentatives",
    "SplitMix64",
    "count_flops",
    "default_scale",
    "dense_causal_attention",
    "dense_fallback_policy",
    "estimate_criticality",
    "exact_critical_set",
    "fuse_scores",
    "gen_synthetic_inputs",
    "gen_synthetic_model",
    "load_model",
    "locality_matrix",
    "locality_overlap",
    "locality_summary",
    "multi_head_dense_attention",
    "prefill",
    "project",
    "pruned_attention",
    "save_model",
    "segment_representatives",
    "select_blocks",
    "softmax_rows",
    "split_heads",
    "__version__",
]
