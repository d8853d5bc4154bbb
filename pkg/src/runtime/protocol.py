"""
线路协议
消息布局（小端）: magic "DYNO", u8 version, u8 msg_type, u64 request_id, u32 split_id,
u16 tensor_count, tensor_count 个 PackedTensor 记录, 可选尾部
帧: u32 小端长度前缀 + 消息
"""
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional

from ..errors import CorruptPayload, MalformedMessage
from ..ispm.packing import PackedTensor

MAGIC = b"DYNO"
VERSION = 1
MAX_FRAME = 256 * 1024 * 1024
DIGEST_LEN = 32

_HEADER = struct.Struct("<4sBBQIH")
_FRAME = struct.Struct("<I")
_SERVER_MS = struct.Struct("<f")


class MsgType(IntEnum):
    HELLO = 1
    INFER_REQUEST = 2
    INFER_RESPONSE = 3
    PROFILE_FEEDBACK = 4
    ERROR = 5


@dataclass
class WireMessage:
    msg_type: MsgType
    request_id: int = 0
    split_id: int = 0
    tensors: List[PackedTensor] = field(default_factory=list)
    trailer: bytes = b""

    # ---- 各类消息的构造与尾部解释 ----

    @classmethod
    def hello(cls, digest: bytes) -> 'WireMessage':
        if len(digest) != DIGEST_LEN:
            raise ValueError(f"权重摘要长度必须为 {DIGEST_LEN}")
        return cls(MsgType.HELLO, trailer=digest)

    @classmethod
    def response(cls, request_id: int, split_id: int, logits: PackedTensor, server_ms: float) -> 'WireMessage':
        return cls(
            MsgType.INFER_RESPONSE, request_id, split_id, [logits], _SERVER_MS.pack(server_ms)
        )

    @classmethod
    def error(cls, request_id: int, reason: str) -> 'WireMessage':
        return cls(MsgType.ERROR, request_id, trailer=reason.encode('utf-8'))

    @property
    def digest(self) -> bytes:
        return self.trailer

    @property
    def server_ms(self) -> Optional[float]:
        if self.msg_type != MsgType.INFER_RESPONSE or len(self.trailer) != _SERVER_MS.size:
            return None
        return _SERVER_MS.unpack(self.trailer)[0]

    @property
    def reason(self) -> str:
        return self.trailer.decode('utf-8', errors='replace')


def encode_message(msg: WireMessage) -> bytes:
    if len(msg.tensors) > 0xFFFF:
        raise MalformedMessage(f"张量数量超出上限: {len(msg.tensors)}")
    parts = [_HEADER.pack(MAGIC, VERSION, int(msg.msg_type), msg.request_id, msg.split_id, len(msg.tensors))]
    parts.extend(t.to_bytes() for t in msg.tensors)
    parts.append(msg.trailer)
    return b"".join(parts)


def decode_message(data: bytes) -> WireMessage:
    if len(data) < _HEADER.size:
        raise MalformedMessage("消息短于固定头部")
    magic, version, msg_type, request_id, split_id, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise MalformedMessage(f"错误的 magic: {magic!r}")
    if version != VERSION:
        raise MalformedMessage(f"不支持的协议版本: {version}")
    try:
        decoded_type = MsgType(msg_type)
    except ValueError as e:
        raise MalformedMessage(f"未知消息类型: {msg_type}") from e

    offset = _HEADER.size
    tensors = []
    try:
        for _ in range(count):
            tensor, offset = PackedTensor.from_bytes(data, offset)
            tensors.append(tensor)
    except CorruptPayload as e:
        raise MalformedMessage(f"张量记录损坏: {e}") from e

    return WireMessage(decoded_type, request_id, split_id, tensors, bytes(data[offset:]))


def frame(payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise MalformedMessage(f"帧过大: {len(payload)}")
    return _FRAME.pack(len(payload)) + payload


def frame_length(prefix: bytes) -> int:
    (length,) = _FRAME.unpack(prefix)
    if length > MAX_FRAME:
        raise MalformedMessage(f"帧长度超出上限: {length}")
    return length


async def read_frame(reader) -> bytes:
    """从 anyio BufferedByteReceiveStream 读取一帧"""
    length = frame_length(await reader.receive_exactly(_FRAME.size))
    return await reader.receive_exactly(length) if length else b""


async def write_frame(stream, payload: bytes):
    await stream.send(frame(payload))
