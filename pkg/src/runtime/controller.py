"""
自适应控制器
按批次运行推理，把耗时记录反馈给剖析器；每批结束（流水线已排空）后按 5% 规则
或截止时间严重超时的标志决定是否重新调度
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..graph.dep_graph import DepGraph
from ..graph.model_io import ModelWeights
from ..ispm.codecs import CodecId
from ..profiler.load import LoadTracker
from ..profiler.network import NetworkEstimator
from ..profiler.profile_db import ProfileDB
from ..scheduler.constraints import HardConstraint, Op, SoftTarget
from ..scheduler.cost_model import ConfigSpace
from ..scheduler.metrics import Metric
from ..scheduler.scheduler import (
    RESCHEDULE_THRESHOLD,
    ProfilerSnapshot,
    ScheduleDecision,
    schedule,
    should_reschedule,
)
from .client import DynoClient, TimingRecord
from .pipeline import run_pipelined, run_sequential


@dataclass
class BatchSummary:
    decision: ScheduleDecision
    records: List[TimingRecord]
    throughput: float
    rescheduled: bool = False
    forced: bool = False


@dataclass
class ControllerReport:
    batches: List[BatchSummary] = field(default_factory=list)
    logits: List[np.ndarray] = field(default_factory=list)

    @property
    def decisions(self) -> List[ScheduleDecision]:
        return [b.decision for b in self.batches]


class AdaptiveController:
    """调度-执行-反馈闭环"""

    def __init__(
        self,
        graph: DepGraph,
        weights: ModelWeights,
        profile: ProfileDB,
        estimator: NetworkEstimator,
        network_type: str,
        constraints: Sequence[HardConstraint],
        targets: Sequence[SoftTarget],
        client: Optional[DynoClient] = None,
        space: Optional[ConfigSpace] = None,
        pipelined: bool = True,
        threshold: float = RESCHEDULE_THRESHOLD,
        deadline_factor: float = 2.0,
        capacity: int = 2,
        codec: CodecId = CodecId.LZ4,
    ):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.graph = graph
        self.weights = weights
        self.profile = profile
        self.estimator = estimator
        self.network_type = network_type
        self.constraints = list(constraints)
        self.targets = list(targets)
        self.client = client
        self.space = space if space is not None else ConfigSpace.from_profile(profile)
        self.pipelined = pipelined
        self.threshold = threshold
        self.deadline_factor = deadline_factor
        self.capacity = capacity
        self.codec = codec
        self.load = LoadTracker(profile)

        self.decision: Optional[ScheduleDecision] = None
        self._snapshot: Optional[ProfilerSnapshot] = None
        self._next_request = 0

    @property
    def deadline_ms(self) -> Optional[float]:
        """最高优先级的延迟约束阈值"""
        for c in self.constraints:
            if c.metric == Metric.LATENCY and c.op in (Op.LE, Op.APPROX):
                return c.thr + (c.eps if c.op == Op.APPROX else 0.0)
        return None

    def current_snapshot(self) -> ProfilerSnapshot:
        return ProfilerSnapshot.of(self.estimator.current(self.network_type), self.load.state)

    def decide(self) -> ScheduleDecision:
        net = self.estimator.current(self.network_type)
        self.decision = schedule(
            self.space, self.constraints, self.targets, net, self.load.state, self.profile, self.pipelined
        )
        self._snapshot = ProfilerSnapshot.of(net, self.load.state)
        self.logger.info(
            f"调度: s={self.decision.s_star} b={self.decision.c_star} "
            f"预测延迟 {self.decision.predicted.latency:.2f}ms 吞吐 {self.decision.predicted.throughput:.2f}/s"
            + ("（尽力而为）" if self.decision.best_effort else "")
        )
        return self.decision

    def probe(self, count: int = 3) -> Optional[float]:
        """测量链路单向时延并写入网络估计"""
        if self.client is None:
            return None
        latency = self.client.probe_latency(count)
        self.estimator.observe_latency(max(latency, 1e-6), self.network_type)
        return latency

    def observe(self, record: TimingRecord) -> bool:
        """吸收一条耗时记录，返回是否出现严重超时"""
        s = record.s
        self.load.observe_client(record.device_ms, s)
        if s < self.graph.N:
            if record.server_ms > 0:
                self.load.observe_server(record.server_ms, s)
            if record.bytes_sent > 0 and record.uplink_ms > 0:
                latency = self.estimator.current(self.network_type).latency_ms
                self.estimator.observe_transfer(record.bytes_sent, record.uplink_ms, self.network_type, latency)
        deadline = self.deadline_ms
        return deadline is not None and record.total_ms > self.deadline_factor * deadline

    def run(self, inputs: Sequence[np.ndarray], batch_size: int = 16) -> ControllerReport:
        report = ControllerReport()
        if self.decision is None:
            self.decide()

        for start in range(0, len(inputs), batch_size):
            batch = inputs[start:start + batch_size]
            decision = self.decision
            if self.pipelined:
                result = run_pipelined(
                    self.graph, self.weights, batch, decision, self.client,
                    capacity=self.capacity, codec=self.codec, first_request_id=self._next_request,
                )
            else:
                result = run_sequential(
                    self.graph, self.weights, batch, decision, self.client,
                    codec=self.codec, first_request_id=self._next_request,
                )
            self._next_request += len(batch)

            forced = False
            records = []
            for logits, record in result.results:
                report.logits.append(logits)
                records.append(record)
                forced = self.observe(record) or forced

            summary = BatchSummary(decision=decision, records=records, throughput=result.throughput, forced=forced)
            # 流水线已排空，新决策只作用于下一批
            if should_reschedule(self._snapshot, self.current_snapshot(), self.threshold, forced):
                if forced:
                    self.logger.warning(f"延迟超过截止时间 {self.deadline_factor} 倍，强制重新调度")
                self.decide()
                summary.rescheduled = True
            report.batches.append(summary)
        return report
