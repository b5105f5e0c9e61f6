"""Decoupled cross-modal graph matching with entropic optimal transport.

Builds visual and linguistic graphs from embedding sets and a knowledge
base, aligns them with marginal-constrained transport plans, derives
tri-state supervision from the hard matches, and trains/evaluates a
synthetic zero-shot transfer benchmark end to end.
"""

__version__ = "0.1.0"

from .assignment import AssignmentResult, build_assignment_cost, hungarian
from .core import (
    ShapeError,
    cosine_similarity,
    finite_difference_gradient,
    scaled_sigmoid_similarity,
    softmax_with_temperature,
    top_k_indices,
)
from .graphs import (
    KnowledgeBase,
    LinguisticGraph,
    ProjectionWeights,
    SubgraphMatch,
    VisualGraph,
    build_channel_visual_graph,
    build_linguistic_graph,
    build_spatial_visual_graph,
    derive_supervision_mask,
    load_knowledge_base,
    match_class_subgraphs,
    save_knowledge_base,
    select_class_representatives,
)
from .losses import (
    IGNORE,
    NEGATIVE,
    POSITIVE,
    LossResult,
    classification_match_loss,
    dice_loss,
    focal_loss,
    graph_matching_loss,
    matching_loss_embeddings,
    total_loss,
)
from .pipeline import (
    MetricsReport,
    StepRecord,
    TrainConfig,
    TrainedModel,
    TrainResult,
    evaluate,
    harmonic_mean,
    train,
)
from .sinkhorn import (
    MarginalSpec,
    TransportPlan,
    affinity_matrix,
    argmax_match,
    sinkhorn_normalize,
)
from .synth import (
    Benchmark,
    OntologySpec,
    SyntheticOntology,
    ToyScene,
    generate_benchmark,
    toy_benchmark_spec,
)
