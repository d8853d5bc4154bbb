"""
参数扫描
沿带宽、客户端减速或截止时间轴，对每个取值运行各调度变体，输出 CSV；
live 模式下在本进程内启动服务端，通过仿真链路实测吞吐与延迟
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .errors import ConfigError
from .graph.dep_graph import DepGraph
from .graph.model_io import ModelWeights
from .ispm.codecs import CodecId
from .ispm.quantization import PASSTHROUGH
from .profiler.load import LoadState
from .profiler.network import LinkEstimate
from .profiler.profile_db import ProfileDB
from .runtime.client import DynoClient
from .runtime.link import LinkEmulator, LinkModel
from .runtime.pipeline import run_pipelined, run_sequential
from .runtime.server import InferenceServer, ServerThread
from .scheduler.baselines import VARIANTS
from .scheduler.constraints import HardConstraint, Op, parse_constraints, parse_targets
from .scheduler.cost_model import predict_metrics
from .scheduler.metrics import Metric

SCHEMA = "dyno-sweep-v1"

logger = logging.getLogger("dyno-sweep")

COLUMNS = [
    'schema', 'axis', 'point', 'variant', 's', 'bitwidth', 'best_effort',
    'pred_latency_ms', 'pred_throughput', 'pred_device_ms', 'pred_net_ms', 'pred_server_ms',
    'pred_accuracy_pp', 'server_savings_pct',
    'measured_latency_ms', 'measured_throughput',
]


class SweepSpec(BaseModel):
    """扫描描述；带宽轴的取值单位为 Mbps，截止时间轴为 ms，减速轴为 SF_client 倍数"""
    axis: Literal['bandwidth', 'client-slowdown', 'deadline']
    points: List[float] = Field(min_length=1)
    link: str = 'wifi'
    constraints: List[str] = Field(default_factory=list)
    targets: List[str] = Field(default_factory=lambda: ['min:latency'])
    variants: List[str] = Field(default_factory=lambda: list(VARIANTS))
    pipelined: bool = False
    live: bool = False
    requests_per_point: int = Field(default=20, ge=2)
    output: str = './output/sweep.csv'

    @field_validator('points')
    @classmethod
    def _sorted(cls, points: List[float]) -> List[float]:
        if any(b < a for a, b in zip(points, points[1:])):
            raise ValueError("扫描取值必须升序排列")
        if any(p <= 0 for p in points):
            raise ValueError("扫描取值必须为正数")
        return points

    @field_validator('variants')
    @classmethod
    def _known(cls, variants: List[str]) -> List[str]:
        unknown = [v for v in variants if v not in VARIANTS]
        if unknown:
            raise ValueError(f"未知调度变体 {unknown}，可选: {sorted(VARIANTS)}")
        return variants


@dataclass
class LiveContext:
    """live 模式需要的模型与输入"""
    graph: DepGraph
    weights: ModelWeights
    inputs: Sequence[np.ndarray]
    codec: CodecId = CodecId.LZ4


def _with_deadline(constraints: List[HardConstraint], deadline: float) -> List[HardConstraint]:
    """用给定截止时间替换（或追加）延迟约束，保持优先级位置"""
    deadline_c = HardConstraint(Metric.LATENCY, Op.LE, deadline)
    out, replaced = [], False
    for c in constraints:
        if c.metric == Metric.LATENCY and not replaced:
            out.append(deadline_c)
            replaced = True
        elif c.metric != Metric.LATENCY:
            out.append(c)
    if not replaced:
        out.append(deadline_c)
    return out


def _fmt(value: Optional[float]) -> str:
    return '' if value is None else f"{value:.6g}"


def run_sweep(
    spec: SweepSpec,
    profile: ProfileDB,
    links: Dict[str, LinkModel],
    live: Optional[LiveContext] = None,
) -> List[Dict[str, str]]:
    if spec.link not in links:
        raise ConfigError(f"未知链路: {spec.link}，可选: {sorted(links)}")
    if spec.live and live is None:
        raise ConfigError("live 扫描需要模型、权重与输入")
    base_link = links[spec.link]
    constraints = parse_constraints(spec.constraints)
    targets = parse_targets(spec.targets)

    server_thread = None
    if spec.live:
        server_thread = ServerThread(InferenceServer(live.graph, live.weights))
        server_thread.start()
        if spec.axis == 'client-slowdown':
            logger.warning("live 模式不会真实减慢客户端，实测列反映未减速的执行")

    rows: List[Dict[str, str]] = []
    try:
        for point in spec.points:
            link = base_link
            load = LoadState()
            point_constraints = constraints
            if spec.axis == 'bandwidth':
                link = base_link.model_copy(update={'bandwidth': point * 1e6 / 8.0})
            elif spec.axis == 'client-slowdown':
                load = LoadState(sf_client=point)
            else:
                point_constraints = _with_deadline(constraints, point)

            net = LinkEstimate(latency_ms=link.latency, bandwidth=link.bandwidth, source='emulated')
            server_only_cost = predict_metrics(profile, net, load, (0, PASSTHROUGH)).server_cost

            for variant in spec.variants:
                decision = VARIANTS[variant](
                    profile, net, load, spec.pipelined, constraints=point_constraints, targets=targets
                )
                mv = decision.predicted
                savings = 100.0 * (1.0 - mv.server_cost / server_only_cost) if server_only_cost > 0 else 0.0
                row = {
                    'schema': SCHEMA,
                    'axis': spec.axis,
                    'point': _fmt(point),
                    'variant': variant,
                    's': str(decision.s_star),
                    'bitwidth': str(decision.c_star),
                    'best_effort': str(int(decision.best_effort)),
                    'pred_latency_ms': _fmt(mv.latency),
                    'pred_throughput': _fmt(mv.throughput),
                    'pred_device_ms': _fmt(mv.device_cost),
                    'pred_net_ms': _fmt(mv.net_time),
                    'pred_server_ms': _fmt(mv.server_cost),
                    'pred_accuracy_pp': _fmt(mv.accuracy),
                    'server_savings_pct': _fmt(savings),
                    'measured_latency_ms': '',
                    'measured_throughput': '',
                }
                if server_thread is not None:
                    latency, throughput = _measure(spec, live, decision, link, server_thread.port)
                    row['measured_latency_ms'] = _fmt(latency)
                    row['measured_throughput'] = _fmt(throughput)
                rows.append(row)
            logger.info(f"扫描点 {spec.axis}={point} 完成")
    finally:
        if server_thread is not None:
            server_thread.stop()
    return rows


def _measure(spec: SweepSpec, live: LiveContext, decision, link: LinkModel, port: int):
    """通过仿真链路实测一个扫描点"""
    inputs = [live.inputs[i % len(live.inputs)] for i in range(spec.requests_per_point)]
    client = None
    if decision.s_star < live.graph.N:
        client = DynoClient('127.0.0.1', port, link=LinkEmulator(link))
        client.connect(live.weights.digest)
    try:
        warmup = min(2, len(inputs) - 2)
        if spec.pipelined:
            report = run_pipelined(
                live.graph, live.weights, inputs, decision, client, warmup=warmup, codec=live.codec
            )
        else:
            report = run_sequential(
                live.graph, live.weights, inputs, decision, client, warmup=warmup, codec=live.codec
            )
    finally:
        if client is not None:
            client.close()
    latency = float(np.mean([record.total_ms for _, record in report.results]))
    return latency, report.steady_throughput


def write_csv(rows: List[Dict[str, str]], path: str):
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    logger.info(f"扫描结果已写入 {path}（{len(rows)} 行）")


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))
