"""
公共测试夹具
"""
import numpy as np
import pytest

from src.graph.dep_graph import DepGraph, LayerNode
from src.graph.model_io import ModelWeights
from src.graph.reference_model import INPUT_SHAPE, build_reference_model, make_inputs


@pytest.fixture(scope="session")
def reference():
    """带种子的参考模型 (graph, weights)"""
    return build_reference_model(seed=0)


@pytest.fixture(scope="session")
def reference_inputs():
    return make_inputs(INPUT_SHAPE, 16, seed=7)


def chain_graph() -> DepGraph:
    """input -> conv -> relu -> dense -> output，共 5 个节点"""
    return DepGraph([
        LayerNode(0, 'input', {'shape': [4]}),
        LayerNode(1, 'flatten', {}, (0,)),
        LayerNode(2, 'relu', {}, (1,)),
        LayerNode(3, 'dense', {'in_features': 4, 'units': 2}, (2,)),
        LayerNode(4, 'output', {}, (3,)),
    ], name="chain")


def residual_graph() -> DepGraph:
    """input=0, conv=1, relu=2, add=3 (relu + input), output=4"""
    return DepGraph([
        LayerNode(0, 'input', {'shape': [2, 4, 4]}),
        LayerNode(1, 'conv2d', {'in_channels': 2, 'out_channels': 2, 'kernel': 1}, (0,)),
        LayerNode(2, 'relu', {}, (1,)),
        LayerNode(3, 'add', {}, (2, 0)),
        LayerNode(4, 'output', {}, (3,)),
    ], name="residual")


def residual_weights(seed: int = 3) -> ModelWeights:
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1.0, size=(2, 2, 1, 1)).astype(np.float32)
    b = rng.normal(0.0, 0.1, size=(2,)).astype(np.float32)
    return ModelWeights({1: (w, b)})


@pytest.fixture
def chain():
    return chain_graph()


@pytest.fixture
def residual():
    return residual_graph(), residual_weights()


class FakeClock:
    """可手动推进的时钟（秒）"""

    def __init__(self, start: float = 1000.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float):
        self.now += seconds


@pytest.fixture
def clock():
    return FakeClock()


def toy_profile():
    """
    三个切分点的小剖析表

    客户端前缀耗时: s=0 -> 0ms, s=2 -> 40ms, s=4 -> 80ms
    服务端后缀耗时: s=0 -> 40ms, s=2 -> 20ms, s=4 -> 0ms
    """
    from src.profiler.profile_db import ProfileDB

    return ProfileDB(
        model_name="toy",
        N=4,
        splits=[0, 2, 4],
        bitwidths=[4, 8, 32],
        unit='cpu',
        t_layer_offline={'cpu': {0: 0.0, 1: 10.0, 2: 30.0, 3: 40.0, 4: 0.0}},
        t_server={0: 0.0, 1: 5.0, 2: 15.0, 3: 20.0, 4: 0.0},
        t_pack={0: {4: 1.0, 8: 1.0, 32: 0.5}, 2: {4: 0.8, 8: 0.8, 32: 0.4}, 4: {4: 0.0, 8: 0.0, 32: 0.0}},
        d_size={0: {4: 2000.0, 8: 4000.0, 32: 16000.0}, 2: {4: 1000.0, 8: 2000.0, 32: 8000.0},
                4: {4: 0.0, 8: 0.0, 32: 0.0}},
        acc_delta={0: {4: 3.0, 8: 0.5, 32: 0.0}, 2: {4: 1.5, 8: 0.0, 32: 0.0}, 4: {4: 0.0, 8: 0.0, 32: 0.0}},
        calibration_count=16,
    )


@pytest.fixture
def profile():
    return toy_profile()
