"""
模型文件与权重文件读写

模型文件：首行为版本头 "ONLOADRT-MODEL v1"，其后为 YAML 正文，
按拓扑顺序列出节点及其显式输入 id。

权重文件：按节点 id 升序拼接的小端 float32 数据，文件尾部为索引：
    每个条目 <u32 node_id, u32 byte_offset, u32 weight_count, u32 bias_count>
    <u32 entry_count> <b"WIDX">
"""
import hashlib
import logging
import struct
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple, Union

import numpy as np
import yaml

from ..errors import ModelFormatError, ShapeError
from .dep_graph import DepGraph, LayerNode, WEIGHTED_KINDS, infer_shapes

logger = logging.getLogger("dyno-model-io")

MODEL_HEADER = "ONLOADRT-MODEL v1"
INDEX_MAGIC = b"WIDX"
_ENTRY = struct.Struct("<IIII")
_TRAILER = struct.Struct("<I4s")


def weight_shapes(node: LayerNode) -> Optional[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    """返回 (权重形状, 偏置形状)，无权重的算子返回 None"""
    p = node.params
    if node.kind == 'conv2d':
        k = p['kernel']
        return (p['out_channels'], p['in_channels'], k, k), (p['out_channels'],)
    if node.kind == 'dense':
        return (p['units'], p['in_features']), (p['units'],)
    return None


class ModelWeights:
    """按节点 id 索引的权重集合，附带权重摘要用于客户端/服务端版本校验"""

    def __init__(self, tensors: Dict[int, Tuple[np.ndarray, np.ndarray]]):
        self._tensors = {
            nid: (np.ascontiguousarray(w, dtype=np.float32), np.ascontiguousarray(b, dtype=np.float32))
            for nid, (w, b) in sorted(tensors.items())
        }
        self._blob: Optional[bytes] = None

    def __getitem__(self, node_id: int) -> Tuple[np.ndarray, np.ndarray]:
        return self._tensors[node_id]

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._tensors

    def items(self) -> Iterator[Tuple[int, Tuple[np.ndarray, np.ndarray]]]:
        return iter(self._tensors.items())

    def to_bytes(self) -> bytes:
        if self._blob is None:
            body = bytearray()
            index = bytearray()
            for nid, (w, b) in self._tensors.items():
                index += _ENTRY.pack(nid, len(body), w.size, b.size)
                body += w.astype('<f4').tobytes()
                body += b.astype('<f4').tobytes()
            self._blob = bytes(body + index + _TRAILER.pack(len(self._tensors), INDEX_MAGIC))
        return self._blob

    @property
    def digest(self) -> bytes:
        """权重文件的 SHA-256 摘要（32 字节）"""
        return hashlib.sha256(self.to_bytes()).digest()

    def check_against(self, graph: DepGraph):
        """检查权重与图中带权重节点一一对应且形状正确"""
        for node in graph.nodes:
            shapes = weight_shapes(node)
            if shapes is None:
                if node.id in self._tensors:
                    raise ModelFormatError(f"节点 {node.id} ({node.kind}) 不应有权重")
                continue
            if node.id not in self._tensors:
                raise ModelFormatError(f"缺少节点 {node.id} ({node.kind}) 的权重")
            w, b = self._tensors[node.id]
            if w.shape != shapes[0] or b.shape != shapes[1]:
                raise ShapeError(
                    f"节点 {node.id} 权重形状 {w.shape}/{b.shape} 与参数 {shapes[0]}/{shapes[1]} 不符"
                )


# ---------- 模型文件 ----------

def parse_model_text(text: str) -> DepGraph:
    """解析模型文件文本"""
    header, _, body = text.partition('\n')
    if header.strip() != MODEL_HEADER:
        raise ModelFormatError(f"模型文件头不正确: '{header.strip()}'，期望 '{MODEL_HEADER}'")
    try:
        doc = yaml.safe_load(body) or {}
    except yaml.YAMLError as e:
        raise ModelFormatError(f"模型文件 YAML 解析失败: {e}") from e

    raw_nodes = doc.get('nodes')
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise ModelFormatError("模型文件缺少 nodes 列表")

    nodes = []
    for raw in raw_nodes:
        try:
            nodes.append(LayerNode(
                id=int(raw['id']),
                kind=str(raw['kind']),
                params=dict(raw.get('params') or {}),
                input_ids=tuple(int(i) for i in raw.get('inputs') or ()),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise ModelFormatError(f"节点声明不完整: {raw} ({e})") from e

    graph = DepGraph(nodes, name=str(doc.get('name', 'model')))
    _check_params(graph)
    infer_shapes(graph)
    return graph


_REQUIRED_PARAMS = {
    'input': ('shape',),
    'conv2d': ('in_channels', 'out_channels', 'kernel'),
    'dense': ('in_features', 'units'),
    'maxpool': ('kernel',),
    'avgpool': ('kernel',),
}


def _check_params(graph: DepGraph):
    for node in graph.nodes:
        missing = [k for k in _REQUIRED_PARAMS.get(node.kind, ()) if k not in node.params]
        if missing:
            raise ModelFormatError(f"节点 {node.id} ({node.kind}) 缺少参数: {missing}")


def build_graph(model_description: Union[str, Path]) -> DepGraph:
    """从模型文件路径构建依赖图"""
    path = Path(model_description)
    if not path.exists():
        raise ModelFormatError(f"模型文件不存在: {path}")
    graph = parse_model_text(path.read_text(encoding='utf-8'))
    logger.info(f"已加载模型 {graph.name}: {len(graph)} 个节点, 来源 {path}")
    return graph


def dump_model_text(graph: DepGraph) -> str:
    body = yaml.safe_dump(
        {'name': graph.name, 'nodes': [n.to_dict() for n in graph.nodes]},
        sort_keys=False, default_flow_style=None,
    )
    return f"{MODEL_HEADER}\n{body}"


def save_model(graph: DepGraph, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_model_text(graph), encoding='utf-8')


# ---------- 权重文件 ----------

def parse_weights(blob: bytes) -> ModelWeights:
    if len(blob) < _TRAILER.size:
        raise ModelFormatError("权重文件过短")
    count, magic = _TRAILER.unpack_from(blob, len(blob) - _TRAILER.size)
    if magic != INDEX_MAGIC:
        raise ModelFormatError("权重文件索引标记缺失")
    index_start = len(blob) - _TRAILER.size - count * _ENTRY.size
    if index_start < 0:
        raise ModelFormatError("权重索引越界")

    tensors = {}
    for i in range(count):
        nid, offset, wcount, bcount = _ENTRY.unpack_from(blob, index_start + i * _ENTRY.size)
        end = offset + 4 * (wcount + bcount)
        if end > index_start:
            raise ModelFormatError(f"节点 {nid} 的权重越界")
        data = np.frombuffer(blob, dtype='<f4', count=wcount + bcount, offset=offset)
        tensors[nid] = (data[:wcount].astype(np.float32), data[wcount:].astype(np.float32))
    return ModelWeights(tensors)


def load_weights(path: Union[str, Path], graph: DepGraph) -> ModelWeights:
    """读取权重文件，并按图中的层参数恢复形状"""
    path = Path(path)
    if not path.exists():
        raise ModelFormatError(f"权重文件不存在: {path}")
    flat = parse_weights(path.read_bytes())
    shaped = {}
    for node in graph.nodes:
        shapes = weight_shapes(node)
        if shapes is None:
            continue
        if node.id not in flat:
            raise ModelFormatError(f"权重文件 {path} 缺少节点 {node.id}")
        w, b = flat[node.id]
        if w.size != int(np.prod(shapes[0])) or b.size != int(np.prod(shapes[1])):
            raise ShapeError(f"权重文件 {path} 中节点 {node.id} 的元素数不符")
        shaped[node.id] = (w.reshape(shapes[0]), b.reshape(shapes[1]))
    weights = ModelWeights(shaped)
    weights.check_against(graph)
    logger.info(f"已加载权重 {path}: {len(shaped)} 个带权重节点")
    return weights


def save_weights(weights: ModelWeights, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(weights.to_bytes())


def load_model(model_path: Union[str, Path], weights_path: Union[str, Path]) -> Tuple[DepGraph, ModelWeights]:
    graph = build_graph(model_path)
    return graph, load_weights(weights_path, graph)


__all__ = [
    'MODEL_HEADER', 'ModelWeights', 'weight_shapes', 'parse_model_text', 'build_graph',
    'dump_model_text', 'save_model', 'parse_weights', 'load_weights', 'save_weights',
    'load_model', 'WEIGHTED_KINDS',
]
