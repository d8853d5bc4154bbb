"""
流水线执行
推理、打包、发送、接收各自运行在独立线程中，只通过有界 FIFO 队列交接数据；
队列满时生产者阻塞，不丢弃请求
"""
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..engine.executor import ExecPlan, execute
from ..errors import NetworkError
from ..graph.dep_graph import DepGraph
from ..graph.model_io import ModelWeights
from ..ispm.codecs import CodecId
from ..ispm.packing import PackingPolicy, pack_dependencies
from .client import DynoClient, TimingRecord, client_infer, response_logits
from .protocol import MsgType, WireMessage

logger = logging.getLogger("dyno-pipeline")

_STOP = object()
_REPLY_TYPES = (MsgType.INFER_RESPONSE, MsgType.ERROR)


@dataclass
class Stage:
    name: str
    fn: Callable[[Any], Any]


@dataclass
class _Failure:
    error: BaseException


@dataclass
class PipelineReport:
    results: List[Any]
    stage_names: List[str]
    elapsed_ms: float
    stage_ms: Dict[str, float]          # 每个请求在各阶段的平均耗时
    occupancy: Dict[str, float]         # 各阶段忙碌时间占总时长的比例
    completions_ms: List[float] = field(default_factory=list)
    warmup: int = 0

    @property
    def count(self) -> int:
        return len(self.results)

    @property
    def throughput(self) -> float:
        """整个运行期间的平均吞吐 (次/秒)"""
        return self.count / self.elapsed_ms * 1000.0 if self.elapsed_ms > 0 else 0.0

    @property
    def steady_throughput(self) -> float:
        """预热之后的稳态吞吐，按相邻完成时间计算"""
        done = self.completions_ms[self.warmup:]
        if len(done) < 2:
            return self.throughput
        span = done[-1] - done[0]
        return (len(done) - 1) / span * 1000.0 if span > 0 else float('inf')

    @property
    def bottleneck(self) -> str:
        return max(self.stage_ms, key=self.stage_ms.get)


class StagedPipeline:
    """多阶段线程流水线，阶段间队列容量为 capacity"""

    def __init__(self, stages: Sequence[Stage], capacity: int = 2):
        if not stages:
            raise ValueError("流水线至少需要一个阶段")
        if capacity < 1:
            raise ValueError(f"队列容量必须至少为 1: {capacity}")
        self.logger = logging.getLogger(self.__class__.__name__)
        self.stages = list(stages)
        self.capacity = capacity

    def _worker(self, index: int, q_in: queue.Queue, q_out: queue.Queue, busy: List[float]):
        stage = self.stages[index]
        while True:
            job = q_in.get()
            if job is _STOP:
                q_out.put(_STOP)
                return
            seq, payload = job
            if isinstance(payload, _Failure):
                q_out.put(job)
                continue
            t0 = time.perf_counter()
            try:
                out = stage.fn(payload)
            except Exception as e:
                self.logger.error(f"阶段 {stage.name} 处理第 {seq} 个请求失败: {e}")
                out = _Failure(e)
            busy[index] += time.perf_counter() - t0
            q_out.put((seq, out))

    def run(self, items: Iterable[Any], warmup: int = 0) -> PipelineReport:
        queues = [queue.Queue(maxsize=self.capacity) for _ in range(len(self.stages) + 1)]
        busy = [0.0] * len(self.stages)
        threads = [
            threading.Thread(
                target=self._worker, args=(i, queues[i], queues[i + 1], busy),
                name=f"stage-{stage.name}", daemon=True,
            )
            for i, stage in enumerate(self.stages)
        ]

        def feed():
            for seq, item in enumerate(items):
                queues[0].put((seq, item))
            queues[0].put(_STOP)

        start = time.perf_counter()
        feeder = threading.Thread(target=feed, name="stage-feed", daemon=True)
        for t in threads:
            t.start()
        feeder.start()

        results: List[Any] = []
        completions: List[float] = []
        failure: Optional[BaseException] = None
        while True:
            job = queues[-1].get()
            if job is _STOP:
                break
            _, payload = job
            if isinstance(payload, _Failure):
                failure = failure or payload.error
                continue
            results.append(payload)
            completions.append((time.perf_counter() - start) * 1000.0)
        elapsed_ms = (time.perf_counter() - start) * 1000.0

        feeder.join()
        for t in threads:
            t.join()
        if failure is not None:
            raise failure

        n = max(len(results), 1)
        names = [s.name for s in self.stages]
        report = PipelineReport(
            results=results,
            stage_names=names,
            elapsed_ms=elapsed_ms,
            stage_ms={name: busy[i] * 1000.0 / n for i, name in enumerate(names)},
            occupancy={name: busy[i] * 1000.0 / elapsed_ms if elapsed_ms else 0.0 for i, name in enumerate(names)},
            completions_ms=completions,
            warmup=min(warmup, len(results)),
        )
        self.logger.debug(f"流水线完成 {report.count} 个请求，吞吐 {report.throughput:.2f}/s，瓶颈 {report.bottleneck}")
        return report


@dataclass
class _Job:
    request_id: int
    x: np.ndarray
    record: TimingRecord
    admitted: float = 0.0
    outputs: Optional[Dict[int, np.ndarray]] = None
    message: Optional[WireMessage] = None
    logits: Optional[np.ndarray] = None


def run_pipelined(
    g: DepGraph,
    weights: ModelWeights,
    inputs: Sequence[np.ndarray],
    decision,
    client: Optional[DynoClient] = None,
    capacity: int = 2,
    warmup: int = 0,
    codec: CodecId = CodecId.LZ4,
    first_request_id: int = 0,
) -> PipelineReport:
    """
    以固定调度结果流水线执行一批输入

    results 中每项为 (logits, TimingRecord)，顺序与输入一致
    """
    s, b = decision.s_star, decision.c_star
    dep_ids = g.split_dependencies(s).dep_ids
    policy = PackingPolicy(bitwidth=b, codec=codec) if s < g.N else None
    if s < g.N and client is None:
        raise NetworkError(f"切分点 {s} 需要服务端，但没有可用连接")
    pending: Dict[int, Tuple[WireMessage, int]] = {}
    in_flight: Set[int] = set()
    in_flight_lock = threading.Lock()

    def infer(job: _Job) -> _Job:
        job.admitted = time.perf_counter()
        t0 = time.perf_counter()
        job.outputs = execute(g, weights, ExecPlan.client(s, job.x))
        job.record.device_ms = (time.perf_counter() - t0) * 1000.0
        if s == g.N:
            job.logits = job.outputs[g.output_id]
            job.record.total_ms = job.record.device_ms
        return job

    def pack_stage(job: _Job) -> _Job:
        t0 = time.perf_counter()
        tensors = pack_dependencies(job.outputs, dep_ids, policy)
        job.outputs = None
        job.message = WireMessage(MsgType.INFER_REQUEST, job.request_id, s, tensors)
        job.record.pack_ms = (time.perf_counter() - t0) * 1000.0
        return job

    def send_stage(job: _Job) -> _Job:
        with in_flight_lock:
            in_flight.add(job.request_id)
        job.record.bytes_sent, job.record.uplink_ms = client.send(job.message)
        job.message = None
        return job

    def receive_stage(job: _Job) -> _Job:
        t0 = time.perf_counter()
        # 应答按 request_id 匹配，不属于本批在途请求的应答直接丢弃
        while job.request_id not in pending:
            response, nbytes = client.receive()
            with in_flight_lock:
                expected = response.request_id in in_flight
            if not expected or response.msg_type not in _REPLY_TYPES:
                logger.warning(f"丢弃无法匹配的应答: request_id={response.request_id} 类型 {response.msg_type.name}")
                continue
            pending[response.request_id] = (response, nbytes)
        response, job.record.bytes_received = pending.pop(job.request_id)
        with in_flight_lock:
            in_flight.discard(job.request_id)
        job.logits = response_logits(response)
        job.record.server_ms = response.server_ms or 0.0
        wait_ms = (time.perf_counter() - t0) * 1000.0
        job.record.net_ms = max(job.record.uplink_ms + wait_ms - job.record.server_ms, 0.0)
        job.record.total_ms = (time.perf_counter() - job.admitted) * 1000.0
        return job

    stages = [Stage('inference', infer)]
    if s < g.N:
        stages += [Stage('packing', pack_stage), Stage('send', send_stage), Stage('receive', receive_stage)]

    jobs = (
        _Job(request_id=first_request_id + i, x=x, record=TimingRecord(first_request_id + i, s, b))
        for i, x in enumerate(inputs)
    )
    report = StagedPipeline(stages, capacity).run(jobs, warmup=warmup)
    report.results = [(job.logits, job.record) for job in report.results]
    return report


def run_sequential(
    g: DepGraph,
    weights: ModelWeights,
    inputs: Sequence[np.ndarray],
    decision,
    client: Optional[DynoClient] = None,
    warmup: int = 0,
    codec: CodecId = CodecId.LZ4,
    first_request_id: int = 0,
) -> PipelineReport:
    """不做流水线，逐个请求执行，报告格式与 run_pipelined 相同"""
    results = []
    completions: List[float] = []
    totals = {'device': 0.0, 'packing': 0.0, 'network': 0.0, 'server': 0.0}
    start = time.perf_counter()
    for i, x in enumerate(inputs):
        logits, record = client_infer(g, weights, x, decision, client, first_request_id + i, codec)
        results.append((logits, record))
        completions.append((time.perf_counter() - start) * 1000.0)
        totals['device'] += record.device_ms
        totals['packing'] += record.pack_ms
        totals['network'] += record.net_ms
        totals['server'] += record.server_ms
    elapsed_ms = (time.perf_counter() - start) * 1000.0

    n = max(len(results), 1)
    return PipelineReport(
        results=results,
        stage_names=list(totals),
        elapsed_ms=elapsed_ms,
        stage_ms={k: v / n for k, v in totals.items()},
        occupancy={k: v / elapsed_ms if elapsed_ms else 0.0 for k, v in totals.items()},
        completions_ms=completions,
        warmup=min(warmup, len(results)),
    )
