"""
推理客户端
本地执行 [0, s]，打包切口依赖后发送给服务端，接收 logits；
网络收发在 anyio 事件循环线程中完成，对外提供同步接口
"""
import logging
import statistics
import threading
import time
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import anyio
import numpy as np
from anyio.from_thread import start_blocking_portal
from anyio.streams.buffered import BufferedByteReceiveStream

from ..engine.executor import ExecPlan, execute
from ..errors import NetworkError, ServerError, VersionMismatch
from ..graph.dep_graph import DepGraph
from ..graph.model_io import ModelWeights
from ..ispm.codecs import CodecId
from ..ispm.packing import PackingPolicy, pack_dependencies, unpack
from .link import LinkEmulator
from .protocol import MsgType, WireMessage, decode_message, encode_message, frame, read_frame

_DISCONNECTED = (anyio.EndOfStream, anyio.IncompleteRead, anyio.BrokenResourceError, anyio.ClosedResourceError)


@dataclass
class TimingRecord:
    """单次推理的耗时分解 (ms) 与流量，反馈给剖析器"""
    request_id: int
    s: int
    bitwidth: int
    device_ms: float = 0.0
    pack_ms: float = 0.0
    uplink_ms: float = 0.0
    net_ms: float = 0.0
    server_ms: float = 0.0
    total_ms: float = 0.0
    bytes_sent: int = 0
    bytes_received: int = 0

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class Exchange:
    response: WireMessage
    bytes_sent: int
    bytes_received: int
    uplink_ms: float
    rtt_ms: float


class DynoClient:
    """与推理服务端之间的一条长连接"""

    def __init__(
        self,
        host: str,
        port: int,
        link: Optional[LinkEmulator] = None,
        connect_timeout: float = 10.0,
        request_timeout: float = 60.0,
        retries: int = 3,
    ):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.host = host
        self.port = port
        self.link = link
        self.connect_timeout = connect_timeout
        self.request_timeout = request_timeout
        self.retries = retries
        self._portal_cm = None
        self._portal = None
        self._stream = None
        self._reader = None
        self._exchange_lock = threading.Lock()

    # ---- 连接管理 ----

    def connect(self, digest: bytes) -> 'DynoClient':
        """建立连接并完成 HELLO 权重摘要校验"""
        self._portal_cm = start_blocking_portal()
        self._portal = self._portal_cm.__enter__()

        last_error: Optional[Exception] = None
        for attempt in range(1, self.retries + 1):
            try:
                self._stream = self._portal.call(self._connect)
                break
            except (OSError, TimeoutError) as e:
                last_error = e
                self.logger.warning(f"连接 {self.host}:{self.port} 失败（第 {attempt} 次）: {e}")
                time.sleep(0.1 * attempt)
        else:
            self.close()
            raise NetworkError(f"无法连接服务端 {self.host}:{self.port}: {last_error}")

        self._reader = BufferedByteReceiveStream(self._stream)
        reply = self.exchange(WireMessage.hello(digest)).response
        if reply.msg_type == MsgType.ERROR:
            self.close()
            if reply.reason.startswith(VersionMismatch.__name__):
                raise VersionMismatch(reply.reason)
            raise ServerError(reply.reason)
        if reply.msg_type != MsgType.HELLO or reply.digest != digest:
            self.close()
            raise VersionMismatch("服务端返回的权重摘要与本地不一致")
        self.logger.info(f"已连接服务端 {self.host}:{self.port}")
        return self

    async def _connect(self):
        with anyio.fail_after(self.connect_timeout):
            return await anyio.connect_tcp(self.host, self.port)

    def close(self):
        if self._stream is not None and self._portal is not None:
            try:
                self._portal.call(self._stream.aclose)
            except Exception as e:
                self.logger.debug(f"关闭连接时出错: {e}")
        self._stream = None
        self._reader = None
        if self._portal_cm is not None:
            self._portal_cm.__exit__(None, None, None)
        self._portal_cm = None
        self._portal = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()

    @property
    def connected(self) -> bool:
        return self._stream is not None

    # ---- 收发 ----

    def send(self, msg: WireMessage) -> Tuple[int, float]:
        """发送一条消息，返回 (帧字节数, 上行耗时 ms)"""
        if not self.connected:
            raise NetworkError("客户端未连接")
        data = frame(encode_message(msg))
        t0 = time.perf_counter()
        if self.link is not None:
            self.link.uplink(len(data))
        try:
            self._portal.call(self._stream.send, data)
        except _DISCONNECTED as e:
            raise NetworkError(f"发送失败，连接已断开: {e!r}") from e
        return len(data), (time.perf_counter() - t0) * 1000.0

    def receive(self) -> Tuple[WireMessage, int]:
        """接收一条消息，返回 (消息, 帧字节数)"""
        if not self.connected:
            raise NetworkError("客户端未连接")
        try:
            data = self._portal.call(self._receive)
        except TimeoutError as e:
            raise NetworkError(f"等待服务端应答超时 ({self.request_timeout}s)") from e
        except _DISCONNECTED as e:
            raise NetworkError(f"接收失败，连接已断开: {e!r}") from e
        nbytes = len(data) + 4
        if self.link is not None:
            self.link.downlink(nbytes)
        return decode_message(data), nbytes

    async def _receive(self) -> bytes:
        with anyio.fail_after(self.request_timeout):
            return await read_frame(self._reader)

    def exchange(self, msg: WireMessage) -> Exchange:
        """一问一答"""
        with self._exchange_lock:
            t0 = time.perf_counter()
            sent, uplink_ms = self.send(msg)
            response, received = self.receive()
            rtt_ms = (time.perf_counter() - t0) * 1000.0
        return Exchange(response, sent, received, uplink_ms, rtt_ms)

    def probe_latency(self, count: int = 3) -> float:
        """以不带张量的反馈消息测量往返时间，返回单向时延估计 (ms)"""
        rtts = []
        for i in range(count):
            ex = self.exchange(WireMessage(MsgType.PROFILE_FEEDBACK, request_id=i))
            rtts.append(ex.rtt_ms)
        return statistics.median(rtts) / 2.0


def response_logits(response: WireMessage) -> np.ndarray:
    if response.msg_type == MsgType.ERROR:
        raise ServerError(response.reason)
    if response.msg_type != MsgType.INFER_RESPONSE or len(response.tensors) != 1:
        raise ServerError(f"意外的应答类型 {response.msg_type.name}")
    return unpack(response.tensors[0])


def client_infer(
    g: DepGraph,
    weights: ModelWeights,
    x: np.ndarray,
    decision,
    client: Optional[DynoClient] = None,
    request_id: int = 0,
    codec: CodecId = CodecId.LZ4,
) -> Tuple[np.ndarray, TimingRecord]:
    """
    执行一次切分推理

    Args:
        decision: 调度结果，取其 s_star 与 c_star
        client: 已连接的客户端；s = N 时可为 None

    Returns:
        (logits, 耗时记录)
    """
    s, b = decision.s_star, decision.c_star
    record = TimingRecord(request_id=request_id, s=s, bitwidth=b)
    start = time.perf_counter()

    outputs = execute(g, weights, ExecPlan.client(s, x))
    record.device_ms = (time.perf_counter() - start) * 1000.0
    if s == g.N:
        record.total_ms = record.device_ms
        return outputs[g.output_id], record

    if client is None:
        raise NetworkError(f"切分点 {s} 需要服务端，但没有可用连接")

    t0 = time.perf_counter()
    tensors = pack_dependencies(outputs, g.split_dependencies(s).dep_ids, PackingPolicy(bitwidth=b, codec=codec))
    record.pack_ms = (time.perf_counter() - t0) * 1000.0

    ex = client.exchange(WireMessage(MsgType.INFER_REQUEST, request_id, s, tensors))
    logits = response_logits(ex.response)
    record.server_ms = ex.response.server_ms or 0.0
    record.uplink_ms = ex.uplink_ms
    record.net_ms = max(ex.rtt_ms - record.server_ms, 0.0)
    record.bytes_sent = ex.bytes_sent
    record.bytes_received = ex.bytes_received
    record.total_ms = (time.perf_counter() - start) * 1000.0
    return logits, record
