"""
打包流水线
pack = 压缩 ∘ 位平面重排 ∘ 输入相关量化，unpack 为其逆过程；
PASSTHROUGH 策略跳过量化与重排，直接压缩小端 float32 字节
"""
import struct
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from ..errors import CorruptPayload, HeaderMismatch
from .bitshuffle import bitshuffle, bitunshuffle, plane_bytes
from .codecs import CODECS, CodecId, get_codec
from .quantization import MAX_BITWIDTH, MIN_BITWIDTH, PASSTHROUGH, QuantHeader, dequant, isquant

MAGIC = b"ISPM"
VERSION = 1
FLAG_CONSTANT = 0x01

_PREFIX = struct.Struct("<4sBIB")       # magic, version, dep_id, rank
_BODY = struct.Struct("<BBffBII")       # bitwidth, flags, val_min, scale_exp, codec, raw_len, payload_len


@dataclass(frozen=True)
class PackingPolicy:
    """打包策略：位宽与编解码器"""
    bitwidth: int = PASSTHROUGH
    codec: CodecId = CodecId.LZ4

    def __post_init__(self):
        if self.bitwidth != PASSTHROUGH and not MIN_BITWIDTH <= self.bitwidth <= MAX_BITWIDTH:
            raise ValueError(f"非法位宽: {self.bitwidth}")
        if CodecId(self.codec) not in CODECS:
            raise ValueError(f"未注册的编解码器: {self.codec}")
        object.__setattr__(self, 'codec', CodecId(self.codec))

    @property
    def passthrough(self) -> bool:
        return self.bitwidth == PASSTHROUGH

    @classmethod
    def of(cls, bitwidth: int, codec: Union[int, str, CodecId] = CodecId.LZ4) -> 'PackingPolicy':
        return cls(bitwidth=int(bitwidth), codec=get_codec(codec).codec_id)


@dataclass(frozen=True)
class PackedTensor:
    dep_id: int
    shape: Tuple[int, ...]
    bitwidth: int
    val_min: float
    scale_exp: float
    constant: bool
    codec: CodecId
    raw_len: int
    payload: bytes

    @property
    def numel(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def expected_raw_len(self) -> int:
        """由形状、位宽与常量标志推出的解压后字节数"""
        if self.bitwidth == PASSTHROUGH:
            return 4 * self.numel
        if self.constant:
            return 0
        return self.bitwidth * plane_bytes(self.numel)

    def check_layout(self, shape: Sequence[int]):
        """在解压与分配内存之前，校验头部与期望形状一致"""
        if tuple(self.shape) != tuple(shape):
            raise HeaderMismatch(f"依赖 {self.dep_id} 的形状 {tuple(self.shape)} 与模型 {tuple(shape)} 不符")
        if self.raw_len != self.expected_raw_len:
            raise HeaderMismatch(f"依赖 {self.dep_id} 的 raw_len {self.raw_len} 与期望 {self.expected_raw_len} 不符")

    @property
    def header(self) -> QuantHeader:
        return QuantHeader(val_min=self.val_min, scale_exp=self.scale_exp, constant=self.constant)

    def to_bytes(self) -> bytes:
        rank = len(self.shape)
        parts = [
            _PREFIX.pack(MAGIC, VERSION, self.dep_id, rank),
            struct.pack(f"<{rank}I", *self.shape),
            _BODY.pack(
                0 if self.bitwidth == PASSTHROUGH else self.bitwidth,
                FLAG_CONSTANT if self.constant else 0,
                self.val_min,
                self.scale_exp,
                int(self.codec),
                self.raw_len,
                len(self.payload),
            ),
            self.payload,
        ]
        return b"".join(parts)

    @property
    def nbytes(self) -> int:
        """序列化后的字节数"""
        return _PREFIX.size + 4 * len(self.shape) + _BODY.size + len(self.payload)

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> Tuple['PackedTensor', int]:
        """从 buf[offset:] 解析一个张量，返回 (张量, 下一个偏移)"""
        view = memoryview(buf)
        try:
            magic, version, dep_id, rank = _PREFIX.unpack_from(view, offset)
            if magic != MAGIC:
                raise CorruptPayload(f"错误的 magic: {magic!r}")
            if version != VERSION:
                raise CorruptPayload(f"不支持的 ISPM 版本: {version}")
            offset += _PREFIX.size
            shape = struct.unpack_from(f"<{rank}I", view, offset)
            offset += 4 * rank
            bitwidth, flags, val_min, scale_exp, codec, raw_len, payload_len = _BODY.unpack_from(view, offset)
            offset += _BODY.size
        except struct.error as e:
            raise CorruptPayload(f"PackedTensor 头部截断: {e}") from e

        if offset + payload_len > len(buf):
            raise CorruptPayload("PackedTensor 负载截断")
        if bitwidth > MAX_BITWIDTH:
            raise CorruptPayload(f"头部位宽非法: {bitwidth}")
        try:
            codec_id = CodecId(codec)
        except ValueError as e:
            raise CorruptPayload(f"未知编解码器 id: {codec}") from e

        payload = bytes(view[offset:offset + payload_len])
        packed = cls(
            dep_id=dep_id,
            shape=tuple(shape),
            bitwidth=PASSTHROUGH if bitwidth == 0 else bitwidth,
            val_min=val_min,
            scale_exp=scale_exp,
            constant=bool(flags & FLAG_CONSTANT),
            codec=codec_id,
            raw_len=raw_len,
            payload=payload,
        )
        return packed, offset + payload_len


def pack(t: np.ndarray, policy: PackingPolicy, dep_id: int = 0) -> PackedTensor:
    t = np.asarray(t, dtype=np.float32)
    codec = CODECS[policy.codec]

    if policy.passthrough:
        header = QuantHeader(val_min=0.0, scale_exp=0.0)
        raw = t.astype('<f4').tobytes()
    else:
        header, q = isquant(t, policy.bitwidth)
        raw = b"" if header.constant else bitshuffle(q, policy.bitwidth)

    codec_id = codec.codec_id
    payload = codec.compress(raw)
    if codec_id != CodecId.NONE and len(payload) >= len(raw):
        # 压缩无收益时退化为存储模式
        codec_id = CodecId.NONE
        payload = raw

    return PackedTensor(
        dep_id=dep_id,
        shape=tuple(int(d) for d in t.shape),
        bitwidth=policy.bitwidth,
        val_min=header.val_min,
        scale_exp=header.scale_exp,
        constant=header.constant,
        codec=codec_id,
        raw_len=len(raw),
        payload=payload,
    )


def unpack(p: PackedTensor) -> np.ndarray:
    raw = get_codec(p.codec).decompress(p.payload, p.raw_len)
    n = p.numel

    if p.bitwidth == PASSTHROUGH:
        if len(raw) != 4 * n:
            raise HeaderMismatch(f"PASSTHROUGH 负载 {len(raw)} 字节与形状 {p.shape} 不符")
        return np.frombuffer(raw, dtype='<f4').astype(np.float32).reshape(p.shape)

    if p.constant:
        if raw:
            raise HeaderMismatch("常量张量不应携带负载")
        return dequant(p.header, np.empty(0, dtype=np.uint16), p.shape)

    q = bitunshuffle(raw, p.bitwidth, n)
    return dequant(p.header, q, p.shape)


def pack_dependencies(
    tensors: Dict[int, np.ndarray], dep_ids: Iterable[int], policy: PackingPolicy
) -> List[PackedTensor]:
    """按 dep_ids 升序打包切口依赖"""
    return [pack(tensors[d], policy, dep_id=d) for d in sorted(dep_ids)]


def unpack_dependencies(packed: Iterable[PackedTensor]) -> Dict[int, np.ndarray]:
    return {p.dep_id: unpack(p) for p in packed}


def serialized_size(packed: Iterable[PackedTensor]) -> int:
    return sum(p.nbytes for p in packed)
