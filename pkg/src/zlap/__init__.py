"""Zero-shot classification with label propagation over vision-language embeddings."""
from .embeddings import average_class_prompts, l2_normalize, load_features, load_labels, write_features, write_labels
from .errors import ZlapError
from .graph import (
    GraphConfig,
    SparseAdjacency,
    build_bimodal_adjacency,
    load_graph,
    normalize_symmetric,
    normalized_graph,
    shortest_path_coverage,
    symmetrize,
    write_graph,
)
from .harness import SynthConfig, accuracy, generate_bimodal, nearest_class_baseline
from .inference import (
    PropagatedScores,
    build_indicator,
    build_indicators,
    dual_inductive_predict,
    fast_inductive_predict,
    load_Y,
    precompute_Y,
    sparsify_Y,
    transductive_predict,
    write_Y,
)
from .knn import top_k
from .solver import LaplacianOperator, SolveConfig, cg_solve, dense_solve_oracle, iterative_propagation

__version__ = "0.1.0"
