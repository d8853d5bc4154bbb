"""
依赖图
将CNN表示为以层为顶点、数据依赖为边的有向无环图；
节点 id 即确定性的执行顺序，切分点 s 表示 id ≤ s 的节点在客户端执行
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ..errors import CycleError, ModelFormatError, RangeError, UnknownOperator

logger = logging.getLogger("dyno-graph")

SUPPORTED_KINDS = (
    'input', 'output', 'conv2d', 'relu', 'add', 'maxpool', 'avgpool',
    'dense', 'flatten', 'concat',
)

# 带权重的算子
WEIGHTED_KINDS = ('conv2d', 'dense')


@dataclass(frozen=True)
class LayerNode:
    """图中的一个层"""
    id: int
    kind: str
    params: Dict[str, Any] = field(default_factory=dict)
    input_ids: Tuple[int, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'kind': self.kind,
            'params': {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()},
            'inputs': list(self.input_ids),
        }


@dataclass(frozen=True)
class SplitPoint:
    """切分点：s 之后的节点在服务端执行，dep_ids 为跨越切口的张量"""
    s: int
    dep_ids: Tuple[int, ...]


class DepGraph:
    """依赖图（构造后不可变，可被执行器、剖析器、调度器并发读取）"""

    def __init__(self, nodes: Sequence[LayerNode], name: str = "model"):
        self.name = name
        self.nodes: Tuple[LayerNode, ...] = tuple(nodes)
        self._validate()
        consumers: List[List[int]] = [[] for _ in self.nodes]
        for node in self.nodes:
            for p in node.input_ids:
                consumers[p].append(node.id)
        self._consumers = tuple(tuple(c) for c in consumers)
        self._check_consumers()
        self._split_cache: Dict[int, SplitPoint] = {}

    def _validate(self):
        if not self.nodes:
            raise ModelFormatError("空模型")

        inputs = outputs = 0
        for position, node in enumerate(self.nodes):
            if node.id != position:
                raise CycleError(f"节点 id {node.id} 与声明顺序 {position} 不一致")
            if node.kind not in SUPPORTED_KINDS:
                raise UnknownOperator(f"节点 {node.id}: 不支持的算子 '{node.kind}'")
            for p in node.input_ids:
                if p >= node.id or p < 0:
                    raise CycleError(f"节点 {node.id} 依赖 {p}，违反拓扑顺序")
            if node.kind == 'input':
                inputs += 1
                if node.input_ids:
                    raise ModelFormatError(f"输入节点 {node.id} 不应有前驱")
            elif not node.input_ids:
                raise ModelFormatError(f"节点 {node.id} ({node.kind}) 缺少输入")
            if node.kind == 'output':
                outputs += 1
                if len(node.input_ids) != 1:
                    raise ModelFormatError("输出节点必须只有一个输入")
            if node.kind == 'add' and len(node.input_ids) < 2:
                raise ModelFormatError(f"add 节点 {node.id} 至少需要两个输入")
            if node.kind not in ('add', 'concat', 'output') and node.kind != 'input' \
                    and len(node.input_ids) != 1:
                raise ModelFormatError(f"节点 {node.id} ({node.kind}) 只接受一个输入")

        if inputs != 1 or outputs != 1:
            raise ModelFormatError(f"模型必须恰好有一个 input 和一个 output 节点 (input={inputs}, output={outputs})")

    def _check_consumers(self):
        for node in self.nodes:
            if node.kind != 'output' and not self._consumers[node.id]:
                raise ModelFormatError(f"节点 {node.id} ({node.kind}) 没有消费者")
        if self.nodes[-1].kind != 'output':
            raise ModelFormatError("输出节点必须是最后一个节点")

    @property
    def N(self) -> int:
        """最大节点 id；s = N 表示纯客户端执行"""
        return len(self.nodes) - 1

    @property
    def input_id(self) -> int:
        return 0

    @property
    def output_id(self) -> int:
        return self.N

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, node_id: int) -> LayerNode:
        return self.nodes[node_id]

    def consumers(self, node_id: int) -> Tuple[int, ...]:
        return self._consumers[node_id]

    @property
    def edges(self) -> List[Tuple[int, int]]:
        """(生产者, 消费者) 边列表，按消费者 id 升序"""
        return [(p, node.id) for node in self.nodes for p in node.input_ids]

    def split_dependencies(self, s: int) -> SplitPoint:
        """计算切分点 s 处跨越切口的依赖张量（一次边扫描，结果升序）"""
        if not isinstance(s, int) or not 0 <= s <= self.N:
            raise RangeError(f"切分点 {s} 超出范围 [0, {self.N}]")
        cached = self._split_cache.get(s)
        if cached is not None:
            return cached
        deps = set()
        for node in self.nodes[s + 1:]:
            for p in node.input_ids:
                if p <= s:
                    deps.add(p)
        split = SplitPoint(s=s, dep_ids=tuple(sorted(deps)))
        self._split_cache[s] = split
        return split

    def candidate_splits(self, relu_only: bool = False) -> List[SplitPoint]:
        """枚举候选切分点；relu_only 时只保留依赖全部为 ReLU 输出的切分点（两端始终保留）"""
        splits = []
        for s in range(self.N + 1):
            split = self.split_dependencies(s)
            if s in (0, self.N):
                splits.append(split)
            elif not relu_only:
                splits.append(split)
            elif split.dep_ids and all(self.nodes[p].kind == 'relu' for p in split.dep_ids):
                splits.append(split)
        return splits

    def search_space_reduction(self) -> float:
        """ReLU 过滤带来的搜索空间缩减比例（仅供报告）"""
        full = len(self.candidate_splits(relu_only=False))
        reduced = len(self.candidate_splits(relu_only=True))
        return 1.0 - reduced / full

    def get_statistics(self) -> Dict[str, Any]:
        """获取图统计信息"""
        kinds: Dict[str, int] = {}
        for node in self.nodes:
            kinds[node.kind] = kinds.get(node.kind, 0) + 1
        return {
            'name': self.name,
            'total_nodes': len(self.nodes),
            'total_edges': len(self.edges),
            'node_kinds': kinds,
        }

    def __repr__(self):
        return f"DepGraph({self.name}, nodes={len(self.nodes)})"


def split_dependencies(g: DepGraph, s: int) -> SplitPoint:
    return g.split_dependencies(s)


def candidate_splits(g: DepGraph, relu_only: bool = False) -> List[SplitPoint]:
    return g.candidate_splits(relu_only)


def infer_shapes(g: DepGraph, input_shape: Optional[Sequence[int]] = None) -> List[Tuple[int, ...]]:
    """静态推导每个节点的输出形状（batch=1，不含 batch 维）"""
    from ..errors import ShapeError

    shapes: List[Tuple[int, ...]] = []
    for node in g.nodes:
        p = node.params
        ins = [shapes[i] for i in node.input_ids]
        if node.kind == 'input':
            shape = tuple(input_shape or p['shape'])
        elif node.kind in ('relu', 'output'):
            shape = ins[0]
        elif node.kind == 'conv2d':
            c, h, w = _expect_rank(node, ins[0], 3)
            if c != p['in_channels']:
                raise ShapeError(f"节点 {node.id}: 输入通道 {c} != {p['in_channels']}")
            k, st, pad = p['kernel'], p.get('stride', 1), p.get('padding', 0)
            shape = (p['out_channels'], (h + 2 * pad - k) // st + 1, (w + 2 * pad - k) // st + 1)
        elif node.kind in ('maxpool', 'avgpool'):
            c, h, w = _expect_rank(node, ins[0], 3)
            k, st = p['kernel'], p.get('stride', p['kernel'])
            shape = (c, (h - k) // st + 1, (w - k) // st + 1)
        elif node.kind == 'flatten':
            size = 1
            for d in ins[0]:
                size *= d
            shape = (size,)
        elif node.kind == 'dense':
            (f,) = _expect_rank(node, ins[0], 1)
            if f != p['in_features']:
                raise ShapeError(f"节点 {node.id}: 输入特征 {f} != {p['in_features']}")
            shape = (p['units'],)
        elif node.kind == 'add':
            if any(s != ins[0] for s in ins):
                raise ShapeError(f"节点 {node.id}: add 输入形状不一致 {ins}")
            shape = ins[0]
        elif node.kind == 'concat':
            rest = {s[1:] for s in ins}
            if len(rest) != 1:
                raise ShapeError(f"节点 {node.id}: concat 输入形状不兼容 {ins}")
            shape = (sum(s[0] for s in ins),) + ins[0][1:]
        else:  # pragma: no cover - _validate 已拦截
            raise UnknownOperator(node.kind)
        if any(d <= 0 for d in shape):
            raise ShapeError(f"节点 {node.id}: 非法输出形状 {shape}")
        shapes.append(tuple(int(d) for d in shape))
    return shapes


def _expect_rank(node: LayerNode, shape: Tuple[int, ...], rank: int) -> Tuple[int, ...]:
    from ..errors import ShapeError

    if len(shape) != rank:
        raise ShapeError(f"节点 {node.id} ({node.kind}) 期望 {rank} 维输入，得到 {shape}")
    return shape
