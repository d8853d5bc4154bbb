"""
依赖图模块
"""
from .dep_graph import (
    DepGraph, LayerNode, SplitPoint, SUPPORTED_KINDS,
    split_dependencies, candidate_splits, infer_shapes,
)
from .model_io import (
    MODEL_HEADER, ModelWeights, build_graph, parse_model_text, save_model,
    load_weights, save_weights, load_model,
)
from .reference_model import build_reference_model, make_inputs, INPUT_SHAPE

__all__ = [
    'DepGraph', 'LayerNode', 'SplitPoint', 'SUPPORTED_KINDS',
    'split_dependencies', 'candidate_splits', 'infer_shapes',
    'MODEL_HEADER', 'ModelWeights', 'build_graph', 'parse_model_text', 'save_model',
    'load_weights', 'save_weights', 'load_model',
    'build_reference_model', 'make_inputs', 'INPUT_SHAPE',
]
