"""
无损编解码器注册表
编解码器 id 写入 PackedTensor 头部，0 为不压缩，1 为 LZ4 块格式
"""
import logging
from abc import ABC, abstractmethod
from enum import IntEnum
from typing import Dict, Union

import lz4.block

from ..errors import CorruptPayload

logger = logging.getLogger("dyno-codec")


class CodecId(IntEnum):
    NONE = 0
    LZ4 = 1


class Codec(ABC):
    codec_id: CodecId
    name: str

    @abstractmethod
    def compress(self, data: bytes) -> bytes:
        pass

    @abstractmethod
    def decompress(self, data: bytes, raw_len: int) -> bytes:
        pass


class NoneCodec(Codec):
    codec_id = CodecId.NONE
    name = 'none'

    def compress(self, data: bytes) -> bytes:
        return bytes(data)

    def decompress(self, data: bytes, raw_len: int) -> bytes:
        if len(data) != raw_len:
            raise CorruptPayload(f"未压缩负载长度 {len(data)} 与 raw_len {raw_len} 不符")
        return bytes(data)


class Lz4BlockCodec(Codec):
    """LZ4 块格式，不在负载中保存原始长度（长度由容器头部给出）"""
    codec_id = CodecId.LZ4
    name = 'lz4'

    def compress(self, data: bytes) -> bytes:
        if not data:
            return b''
        return lz4.block.compress(bytes(data), mode='default', store_size=False)

    def decompress(self, data: bytes, raw_len: int) -> bytes:
        if raw_len == 0:
            if data:
                raise CorruptPayload("raw_len 为 0 但负载非空")
            return b''
        try:
            out = lz4.block.decompress(bytes(data), uncompressed_size=raw_len)
        except (lz4.block.LZ4BlockError, ValueError) as e:
            raise CorruptPayload(f"LZ4 解压失败: {e}") from e
        if len(out) != raw_len:
            raise CorruptPayload(f"LZ4 解压长度 {len(out)} 与 raw_len {raw_len} 不符")
        return out


CODECS: Dict[CodecId, Codec] = {
    CodecId.NONE: NoneCodec(),
    CodecId.LZ4: Lz4BlockCodec(),
}


def get_codec(codec: Union[int, str, CodecId]) -> Codec:
    """按 id 或名称查找编解码器"""
    if isinstance(codec, str):
        for c in CODECS.values():
            if c.name == codec.lower():
                return c
        raise ValueError(f"未知编解码器: {codec}")
    try:
        return CODECS[CodecId(int(codec))]
    except ValueError as e:
        raise CorruptPayload(f"未知编解码器 id: {codec}") from e


def compress(data: bytes, codec: Union[int, str, CodecId]) -> bytes:
    return get_codec(codec).compress(data)


def decompress(data: bytes, codec: Union[int, str, CodecId], raw_len: int) -> bytes:
    return get_codec(codec).decompress(data, raw_len)
