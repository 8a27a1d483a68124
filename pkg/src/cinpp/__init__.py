"""Topological message passing with boundary, upper and lower messages on cell complexes."""

from .complex import Cell, CellComplex, Graph, build_graph, disjoint_union, enumerate_induced_cycles, lift, validate
from .cwl import (
    Coloring,
    RefinementScheme,
    coloring_equivalent,
    distinguishable,
    initial_coloring,
    refine_step,
    refine_to_stable,
    refines,
)
from .estimator import CellLifter, CINPPClassifier, CINPPRegressor
from .io import (
    Dataset,
    deserialize_complex,
    generate_synthetic,
    load_checkpoint,
    parse_graph_jsonl,
    save_checkpoint,
    serialize_complex,
)
from .model import CinModel, ComplexBatch, InjectiveStubs, ModelConfig, count_messages, footprint_coloring
from .train import TrainConfig, TrainReport, evaluate, train_loop

__version__ = "0.1.0"

__all__ = [
    "Cell", "CellComplex", "Graph", "build_graph", "disjoint_union", "enumerate_induced_cycles",
    "lift", "validate", "Coloring", "RefinementScheme", "coloring_equivalent", "distinguishable",
    "initial_coloring", "refine_step", "refine_to_stable", "refines", "CellLifter",
    "CINPPClassifier", "CINPPRegressor", "Dataset", "deserialize_complex", "generate_synthetic",
    "load_checkpoint", "parse_graph_jsonl", "save_checkpoint", "serialize_complex", "CinModel",
    "ComplexBatch", "InjectiveStubs", "ModelConfig", "count_messages", "footprint_coloring",
    "TrainConfig", "TrainReport", "evaluate", "train_loop",
]
