"""
推理服务端
接收切口依赖，解包后恢复执行 (s, N]，返回 logits 与服务端计算耗时；
同一模型实例上的请求串行执行
"""
import logging
import time
from typing import List, Optional, Tuple

import anyio
from anyio.abc import SocketAttribute
from anyio.from_thread import start_blocking_portal
from anyio.streams.buffered import BufferedByteReceiveStream

from ..engine.executor import ExecPlan, execute
from ..errors import DynoError, MalformedMessage, VersionMismatch
from ..graph.dep_graph import DepGraph, infer_shapes
from ..graph.model_io import ModelWeights
from ..ispm.codecs import CodecId
from ..ispm.packing import PackingPolicy, pack, unpack_dependencies
from ..ispm.quantization import PASSTHROUGH
from .protocol import MsgType, WireMessage, decode_message, encode_message, read_frame, write_frame

RESPONSE_POLICY = PackingPolicy(bitwidth=PASSTHROUGH, codec=CodecId.NONE)

_DISCONNECTED = (anyio.EndOfStream, anyio.IncompleteRead, anyio.BrokenResourceError, anyio.ClosedResourceError)


def error_reason(error: Exception) -> str:
    """错误消息尾部: "<异常类名>: <描述>"，客户端据此还原异常类型"""
    return f"{error.__class__.__name__}: {error}"


class InferenceServer:
    """切分推理服务端"""

    def __init__(self, graph: DepGraph, weights: ModelWeights, host: str = '127.0.0.1', port: int = 0):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.graph = graph
        self.weights = weights
        self.digest = weights.digest
        self.shapes = infer_shapes(graph)
        self.host = host
        self.port = port
        self.requests_served = 0
        self.trace: Optional[List[int]] = None   # 置为列表后记录服务端执行过的节点
        self._lock: Optional[anyio.Lock] = None

    async def serve(self, *, task_status=anyio.TASK_STATUS_IGNORED):
        """监听并处理连接，直到被取消"""
        self._lock = anyio.Lock()
        listener = await anyio.create_tcp_listener(local_host=self.host, local_port=self.port)
        async with listener:
            self.port = listener.listeners[0].extra(SocketAttribute.local_port)
            self.logger.info(f"服务端已启动: {self.host}:{self.port} 模型 {self.graph.name}")
            task_status.started(self.port)
            await listener.serve(self._handle_connection)

    async def _handle_connection(self, stream):
        peer = stream.extra(SocketAttribute.remote_address, None)
        self.logger.info(f"客户端已连接: {peer}")
        greeted = False
        async with stream:
            reader = BufferedByteReceiveStream(stream)
            while True:
                try:
                    data = await read_frame(reader)
                except _DISCONNECTED:
                    break
                except MalformedMessage as e:
                    self.logger.warning(f"帧错误，断开连接 {peer}: {e}")
                    break

                close = False
                msg = None
                try:
                    msg = decode_message(data)
                    reply, close = await self._dispatch(msg, greeted)
                    if msg.msg_type == MsgType.HELLO and not close:
                        greeted = True
                except MalformedMessage as e:
                    self.logger.warning(f"格式错误的请求: {e}")
                    reply = WireMessage.error(msg.request_id if msg is not None else 0, error_reason(e))
                except Exception as e:
                    self.logger.exception(f"处理 {peer} 的消息时出现意外错误")
                    reply = WireMessage.error(msg.request_id if msg is not None else 0, error_reason(e))

                try:
                    await write_frame(stream, encode_message(reply))
                except _DISCONNECTED:
                    break
                if close:
                    break
        self.logger.info(f"客户端已断开: {peer}")

    async def _dispatch(self, msg: WireMessage, greeted: bool) -> Tuple[WireMessage, bool]:
        """返回 (应答, 是否关闭连接)"""
        if msg.msg_type == MsgType.HELLO:
            if msg.digest != self.digest:
                e = VersionMismatch("客户端与服务端的模型权重不一致")
                self.logger.warning(str(e))
                return WireMessage.error(msg.request_id, error_reason(e)), True
            return WireMessage.hello(self.digest), False

        if msg.msg_type == MsgType.PROFILE_FEEDBACK:
            # 无张量的反馈消息原样回显，用于测量链路时延
            return WireMessage(MsgType.PROFILE_FEEDBACK, msg.request_id, msg.split_id), False

        if msg.msg_type == MsgType.INFER_REQUEST:
            if not greeted:
                raise MalformedMessage("推理请求之前必须先完成 HELLO")
            async with self._lock:
                try:
                    reply = await anyio.to_thread.run_sync(self.handle_request, msg)
                except DynoError as e:
                    self.logger.error(f"请求 {msg.request_id} 执行失败: {e}")
                    reply = WireMessage.error(msg.request_id, error_reason(e))
                except Exception as e:
                    # 单个请求的意外错误不能让监听循环退出
                    self.logger.exception(f"请求 {msg.request_id} 出现意外错误")
                    reply = WireMessage.error(msg.request_id, error_reason(e))
            return reply, False

        raise MalformedMessage(f"服务端不接受消息类型 {msg.msg_type.name}")

    def handle_request(self, msg: WireMessage) -> WireMessage:
        """解包依赖并恢复执行 (s, N]"""
        g = self.graph
        s = msg.split_id
        if s >= g.N:
            raise MalformedMessage(f"切分点 {s} 没有需要服务端执行的部分")
        expected = g.split_dependencies(s).dep_ids
        received = tuple(sorted(t.dep_id for t in msg.tensors))
        if received != expected:
            raise MalformedMessage(f"切分点 {s} 需要依赖 {list(expected)}，收到 {list(received)}")

        try:
            for t in msg.tensors:
                t.check_layout(self.shapes[t.dep_id])
            deps = unpack_dependencies(msg.tensors)
        except (DynoError, ValueError) as e:
            raise MalformedMessage(f"依赖张量解包失败: {e}") from e

        t0 = time.perf_counter()
        outputs = execute(g, self.weights, ExecPlan.server(g, s, deps), trace=self.trace)
        server_ms = (time.perf_counter() - t0) * 1000.0

        logits = pack(outputs[g.output_id], RESPONSE_POLICY, dep_id=g.output_id)
        self.requests_served += 1
        return WireMessage.response(msg.request_id, s, logits, server_ms)


class ServerThread:
    """在后台事件循环线程中运行服务端（测试与 live 扫描使用）"""

    def __init__(self, server: InferenceServer):
        self.server = server
        self._portal_cm = None
        self._future = None

    @property
    def port(self) -> int:
        return self.server.port

    def start(self) -> int:
        self._portal_cm = start_blocking_portal()
        portal = self._portal_cm.__enter__()
        self._future, port = portal.start_task(self.server.serve)
        return port

    def stop(self):
        if self._future is not None:
            self._future.cancel()
            self._future = None
        if self._portal_cm is not None:
            self._portal_cm.__exit__(None, None, None)
            self._portal_cm = None

    def __enter__(self) -> 'ServerThread':
        self.start()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.stop()


def run_server(graph: DepGraph, weights: ModelWeights, host: str, port: int):
    """阻塞运行服务端直到中断"""
    server = InferenceServer(graph, weights, host, port)
    anyio.run(server.serve)
