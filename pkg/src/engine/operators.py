"""
算子实现
所有累加按输入下标升序进行，相同输入得到逐位相同的输出
"""
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..errors import ShapeError
from ..graph.dep_graph import LayerNode

Weights = Optional[Tuple[np.ndarray, np.ndarray]]


def _rank(node: LayerNode, x: np.ndarray, rank: int):
    if x.ndim != rank:
        raise ShapeError(f"节点 {node.id} ({node.kind}) 期望 {rank} 维输入，得到 {x.shape}")


def conv2d(node: LayerNode, inputs: List[np.ndarray], weights: Weights) -> np.ndarray:
    x = inputs[0]
    _rank(node, x, 3)
    w, b = weights
    out_c, in_c, k, _ = w.shape
    if x.shape[0] != in_c:
        raise ShapeError(f"节点 {node.id}: 输入通道 {x.shape[0]} != 权重通道 {in_c}")
    stride = node.params.get('stride', 1)
    pad = node.params.get('padding', 0)
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    h_out = (x.shape[1] - k) // stride + 1
    w_out = (x.shape[2] - k) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ShapeError(f"节点 {node.id}: 卷积核 {k} 大于输入 {x.shape}")

    out = np.empty((out_c, h_out, w_out), dtype=np.float32)
    out[...] = b[:, None, None]
    # 固定顺序：输入通道 -> 核行 -> 核列
    for c in range(in_c):
        for i in range(k):
            for j in range(k):
                window = x[c, i:i + stride * h_out:stride, j:j + stride * w_out:stride]
                out += w[:, c, i, j][:, None, None] * window[None, :, :]
    return out


def relu(node: LayerNode, inputs: List[np.ndarray], weights: Weights) -> np.ndarray:
    return np.maximum(inputs[0], np.float32(0.0))


def add(node: LayerNode, inputs: List[np.ndarray], weights: Weights) -> np.ndarray:
    shape = inputs[0].shape
    out = inputs[0].copy()
    for x in inputs[1:]:
        if x.shape != shape:
            raise ShapeError(f"节点 {node.id}: add 输入形状不一致 {shape} vs {x.shape}")
        out += x
    return out


def _pool(node: LayerNode, x: np.ndarray, reduce: str) -> np.ndarray:
    _rank(node, x, 3)
    k = node.params['kernel']
    stride = node.params.get('stride', k)
    h_out = (x.shape[1] - k) // stride + 1
    w_out = (x.shape[2] - k) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ShapeError(f"节点 {node.id}: 池化窗口 {k} 大于输入 {x.shape}")
    out = None
    for i in range(k):
        for j in range(k):
            window = x[:, i:i + stride * h_out:stride, j:j + stride * w_out:stride]
            if out is None:
                out = window.astype(np.float32, copy=True)
            elif reduce == 'max':
                np.maximum(out, window, out=out)
            else:
                out += window
    if reduce == 'avg':
        out /= np.float32(k * k)
    return out


def maxpool(node: LayerNode, inputs: List[np.ndarray], weights: Weights) -> np.ndarray:
    return _pool(node, inputs[0], 'max')


def avgpool(node: LayerNode, inputs: List[np.ndarray], weights: Weights) -> np.ndarray:
    return _pool(node, inputs[0], 'avg')


def dense(node: LayerNode, inputs: List[np.ndarray], weights: Weights) -> np.ndarray:
    x = inputs[0]
    _rank(node, x, 1)
    w, b = weights
    if x.shape[0] != w.shape[1]:
        raise ShapeError(f"节点 {node.id}: 输入特征 {x.shape[0]} != 权重 {w.shape[1]}")
    out = b.astype(np.float32, copy=True)
    for i in range(x.shape[0]):
        out += w[:, i] * x[i]
    return out


def flatten(node: LayerNode, inputs: List[np.ndarray], weights: Weights) -> np.ndarray:
    return inputs[0].reshape(-1).copy()


def concat(node: LayerNode, inputs: List[np.ndarray], weights: Weights) -> np.ndarray:
    rest = {x.shape[1:] for x in inputs}
    if len(rest) != 1:
        raise ShapeError(f"节点 {node.id}: concat 输入形状不兼容 {[x.shape for x in inputs]}")
    return np.concatenate(inputs, axis=0)


def identity(node: LayerNode, inputs: List[np.ndarray], weights: Weights) -> np.ndarray:
    return inputs[0].copy()


OPERATORS: Dict[str, Callable[[LayerNode, List[np.ndarray], Weights], np.ndarray]] = {
    'conv2d': conv2d,
    'relu': relu,
    'add': add,
    'maxpool': maxpool,
    'avgpool': avgpool,
    'dense': dense,
    'flatten': flatten,
    'concat': concat,
    'output': identity,
}
