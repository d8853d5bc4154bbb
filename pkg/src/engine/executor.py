"""
执行器
按节点 id 顺序执行依赖图的一个区间，支持跳过（区间外节点不执行）与注入（恢复对端传来的依赖）
"""
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set

import numpy as np

from ..errors import MissingDependency, ShapeError
from ..graph.dep_graph import DepGraph
from ..graph.model_io import ModelWeights
from .operators import OPERATORS


@dataclass
class ExecPlan:
    """执行计划：运行 [start, stop] 区间内的节点，inject 为外部注入的张量"""
    start: int
    stop: int
    inject: Dict[int, np.ndarray] = field(default_factory=dict)
    keep_all: bool = False    # 返回区间内全部节点输出（用于离线剖析）

    @classmethod
    def client(cls, s: int, x: np.ndarray) -> 'ExecPlan':
        """客户端计划：执行 [0, s]，输入张量注入到输入节点"""
        return cls(start=0, stop=s, inject={0: x})

    @classmethod
    def server(cls, g: DepGraph, s: int, deps: Dict[int, np.ndarray]) -> 'ExecPlan':
        """服务端计划：执行 (s, N]，依赖张量注入"""
        return cls(start=s + 1, stop=g.N, inject=dict(deps))


def check_plan(g: DepGraph, plan: ExecPlan):
    """校验计划一致性：区间内每个节点的输入要么在区间内产生，要么被注入"""
    if not 0 <= plan.start <= g.N + 1 or not plan.start - 1 <= plan.stop <= g.N:
        raise MissingDependency(f"非法执行区间 [{plan.start}, {plan.stop}]")
    for node in g.nodes[plan.start:plan.stop + 1]:
        if node.kind == 'input' and node.id not in plan.inject:
            raise MissingDependency("输入节点需要注入输入张量")
        for p in node.input_ids:
            if p < plan.start and p not in plan.inject:
                raise MissingDependency(f"节点 {node.id} 依赖的张量 {p} 既未产生也未注入")


def execute(
    g: DepGraph,
    weights: ModelWeights,
    plan: ExecPlan,
    trace: Optional[List[int]] = None,
    timings: Optional[Dict[int, float]] = None,
) -> Dict[int, np.ndarray]:
    """
    执行计划，返回区间内作为切口依赖或输出节点的张量

    Args:
        trace: 若提供，追加实际执行的节点 id
        timings: 若提供，记录每个节点的执行耗时（ms）

    Returns:
        {node_id: 张量}
    """
    check_plan(g, plan)

    values: Dict[int, np.ndarray] = dict(plan.inject)
    remaining = _remaining_uses(g, plan)

    for node in g.nodes[plan.start:plan.stop + 1]:
        t0 = time.perf_counter() if timings is not None else 0.0
        if node.kind == 'input':
            out = _check_input(g, plan.inject[node.id])
        else:
            inputs = [values[p] for p in node.input_ids]
            w = weights[node.id] if node.id in weights else None
            out = OPERATORS[node.kind](node, inputs, w)
        if timings is not None:
            timings[node.id] = (time.perf_counter() - t0) * 1000.0
        values[node.id] = out
        if trace is not None:
            trace.append(node.id)
        if not plan.keep_all:
            # 释放不再需要的中间结果
            for p in node.input_ids:
                remaining[p] -= 1
                if remaining[p] == 0 and p not in plan.inject:
                    values.pop(p, None)

    if plan.keep_all:
        return {nid: values[nid] for nid in range(plan.start, plan.stop + 1)}
    return {nid: values[nid] for nid in _emitted(g, plan)}


def _remaining_uses(g: DepGraph, plan: ExecPlan) -> Dict[int, int]:
    uses: Dict[int, int] = {}
    emitted = _emitted(g, plan)
    for node in g.nodes[plan.start:plan.stop + 1]:
        for p in node.input_ids:
            uses[p] = uses.get(p, 0) + 1
    for nid in emitted:
        # 需要返回的张量不能提前释放
        uses[nid] = uses.get(nid, 0) + 1
    for node in g.nodes[plan.start:plan.stop + 1]:
        uses.setdefault(node.id, 0)
    return uses


def _emitted(g: DepGraph, plan: ExecPlan) -> Set[int]:
    if plan.stop < plan.start:
        return set()
    if plan.stop == g.N:
        return {g.output_id}
    deps = g.split_dependencies(plan.stop).dep_ids
    return {p for p in deps if p >= plan.start}


def _check_input(g: DepGraph, x: np.ndarray) -> np.ndarray:
    expected = tuple(g.nodes[0].params['shape'])
    x = np.asarray(x)
    if x.shape != expected:
        raise ShapeError(f"输入形状 {x.shape} 与模型输入 {expected} 不符")
    if x.dtype != np.float32:
        x = x.astype(np.float32)
    return x


def forward_logits(g: DepGraph, weights: ModelWeights, x: np.ndarray) -> np.ndarray:
    """完整前向传播，返回输出节点张量"""
    outputs = execute(g, weights, ExecPlan.client(g.N, x))
    return outputs[g.output_id]


def forward_all(
    g: DepGraph, weights: ModelWeights, x: np.ndarray, timings: Optional[Dict[int, float]] = None
) -> Dict[int, np.ndarray]:
    """完整前向传播并保留每个节点的输出"""
    plan = ExecPlan(start=0, stop=g.N, inject={0: x}, keep_all=True)
    return execute(g, weights, plan, timings=timings)
