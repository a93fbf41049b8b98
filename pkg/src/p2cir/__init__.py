"""Predict FPGA resource usage and timing from compiler IR graphs.

The toolkit covers the whole pipeline: a generator of synthetic SSA
programs, DFG/CDFG construction and featurization, a deterministic
rule-based labeling oracle, a small autodiff engine, five GNN layer kinds,
and training/evaluation harnesses including a size-generalization study.
"""

from .frontend import (
    FeaturizedGraph,
    ParseError,
    build_cdfg,
    build_dfg,
    featurize,
    parse_program,
    print_program,
)
from .graph import (
    CDFG,
    DFG,
    Edge,
    EdgeFeatures,
    GraphStats,
    IrGraph,
    Node,
    NodeFeatures,
    compute_stats,
    detect_back_edges,
    disjoint_union,
    from_json,
    to_json,
    validate,
)
from .models import Model, ModelConfig, prepare_batch
from .oracle import DelayTable, LabelVector, OracleConfig, critical_path, import_labels, label_graph
from .syngen import GenConfig, generate_dataset, generate_program
from .training import (
    Checkpoint,
    Metrics,
    TrainConfig,
    evaluate,
    generalization_eval,
    load_dataset,
    multi_run_train,
    split,
    train,
)

__version__ = "0.1.0"
