"""
桌面规模参考模型
带一个残差连接和一个 concat 分支的小型 CNN，权重由带种子的生成器产生
"""
from typing import List, Sequence, Tuple

import numpy as np

from .dep_graph import DepGraph, LayerNode
from .model_io import ModelWeights, weight_shapes

INPUT_SHAPE = (3, 32, 32)
NUM_CLASSES = 10


def reference_graph() -> DepGraph:
    """构建参考模型的依赖图"""
    c = 8
    conv3 = lambda cin, cout: {'in_channels': cin, 'out_channels': cout, 'kernel': 3, 'stride': 1, 'padding': 1}
    nodes = [
        LayerNode(0, 'input', {'shape': list(INPUT_SHAPE)}),
        LayerNode(1, 'conv2d', conv3(INPUT_SHAPE[0], c), (0,)),
        LayerNode(2, 'relu', {}, (1,)),
        LayerNode(3, 'conv2d', conv3(c, c), (2,)),
        LayerNode(4, 'relu', {}, (3,)),
        LayerNode(5, 'conv2d', conv3(c, c), (4,)),
        # 残差连接
        LayerNode(6, 'add', {}, (5, 2)),
        LayerNode(7, 'relu', {}, (6,)),
        LayerNode(8, 'maxpool', {'kernel': 2, 'stride': 2}, (7,)),
        # Inception 风格的两个分支
        LayerNode(9, 'conv2d', {'in_channels': c, 'out_channels': c, 'kernel': 1, 'stride': 1, 'padding': 0}, (8,)),
        LayerNode(10, 'relu', {}, (9,)),
        LayerNode(11, 'conv2d', conv3(c, c), (8,)),
        LayerNode(12, 'relu', {}, (11,)),
        LayerNode(13, 'concat', {}, (10, 12)),
        LayerNode(14, 'avgpool', {'kernel': 4, 'stride': 4}, (13,)),
        LayerNode(15, 'flatten', {}, (14,)),
        LayerNode(16, 'dense', {'in_features': 2 * c * 4 * 4, 'units': NUM_CLASSES}, (15,)),
        LayerNode(17, 'output', {}, (16,)),
    ]
    return DepGraph(nodes, name="reference-resnet-inception")


def random_weights(graph: DepGraph, seed: int = 0, bias_shift: float = -0.3) -> ModelWeights:
    """He 初始化的随机权重；卷积偏置整体下移以得到更稀疏的 ReLU 输出"""
    rng = np.random.default_rng(seed)
    tensors = {}
    for node in graph.nodes:
        shapes = weight_shapes(node)
        if shapes is None:
            continue
        w_shape, b_shape = shapes
        fan_in = int(np.prod(w_shape[1:]))
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=w_shape).astype(np.float32)
        shift = bias_shift if node.kind == 'conv2d' else 0.0
        b = (rng.normal(0.0, 0.05, size=b_shape) + shift).astype(np.float32)
        tensors[node.id] = (w, b)
    return ModelWeights(tensors)


def make_inputs(shape: Sequence[int], count: int, seed: int = 0, block: int = 4) -> List[np.ndarray]:
    """
    生成带种子的输入集合

    低分辨率噪声按 block 放大后叠加少量细节噪声，近似自然图像的空间相关性。
    """
    rng = np.random.default_rng(seed)
    c, h, w = shape
    inputs = []
    for _ in range(count):
        coarse = rng.normal(0.0, 1.0, size=(c, -(-h // block), -(-w // block)))
        image = np.repeat(np.repeat(coarse, block, axis=1), block, axis=2)[:, :h, :w]
        image = image + rng.normal(0.0, 0.1, size=(c, h, w))
        inputs.append(image.astype(np.float32))
    return inputs


def build_reference_model(seed: int = 0) -> Tuple[DepGraph, ModelWeights]:
    graph = reference_graph()
    weights = random_weights(graph, seed)
    weights.check_against(graph)
    return graph, weights
