"""Explainable multi-stakeholder job recommendation over knowledge-graph
subgraphs, with its sampling pipeline, baselines, and fairness metrics."""

from .kg import (
    Column,
    EntityKind,
    InversePair,
    KnowledgeGraph,
    SubclassPropagate,
    Table,
    Transitive,
    apply_inference,
    build_graph,
)
from .metrics import EvalReport, RankedList, evaluate, ndcg_at_k
from .model import ModelConfig, extract_explanation, forward, fuse_harmonic, init_params
from .sampling import (
    PairSubGraph,
    SplitAssignment,
    negative_sample,
    relabel_local,
    reverse,
    sample_pair_subgraph,
    split_by_candidate,
)
from .synth import SynthConfig, SynthWorld, generate, world_to_tables
from .training import TrainConfig, TrainHistory, adam_step, lambdarank_grads, train

__all__ = [
    "Column", "EntityKind", "InversePair", "KnowledgeGraph", "SubclassPropagate",
    "Table", "Transitive", "apply_inference", "build_graph",
    "EvalReport", "RankedList", "evaluate", "ndcg_at_k",
    "ModelConfig", "extract_explanation", "forward", "fuse_harmonic", "init_params",
    "PairSubGraph", "SplitAssignment", "negative_sample", "relabel_local", "reverse",
    "sample_pair_subgraph", "split_by_candidate",
    "SynthConfig", "SynthWorld", "generate", "world_to_tables",
    "TrainConfig", "TrainHistory", "adam_step", "lambdarank_grads", "train",
]
__version__ = "0.1.0"
