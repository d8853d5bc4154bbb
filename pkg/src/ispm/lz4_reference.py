"""
纯 Python 的 LZ4 块解码器
与 lz4 扩展相互独立，用于交叉校验压缩负载
"""
from typing import Optional

from ..errors import CorruptPayload


def _read_length(src: bytes, pos: int, base: int):
    length = base
    if base == 15:
        while True:
            if pos >= len(src):
                raise CorruptPayload("长度字段越界")
            byte = src[pos]
            pos += 1
            length += byte
            if byte != 255:
                break
    return length, pos


def decode_block(src: bytes, raw_len: Optional[int] = None) -> bytes:
    """解码一个 LZ4 块（不含长度前缀）"""
    out = bytearray()
    pos = 0
    n = len(src)
    while pos < n:
        token = src[pos]
        pos += 1

        lit_len, pos = _read_length(src, pos, token >> 4)
        if pos + lit_len > n:
            raise CorruptPayload("字面量越界")
        out += src[pos:pos + lit_len]
        pos += lit_len
        if pos == n:
            # 最后一个序列只有字面量
            break

        if pos + 2 > n:
            raise CorruptPayload("偏移字段越界")
        offset = src[pos] | (src[pos + 1] << 8)
        pos += 2
        if offset == 0 or offset > len(out):
            raise CorruptPayload(f"非法匹配偏移 {offset}")

        match_len, pos = _read_length(src, pos, token & 0x0F)
        match_len += 4
        start = len(out) - offset
        # 匹配区可与输出重叠，逐字节复制
        for i in range(match_len):
            out.append(out[start + i])

    if raw_len is not None and len(out) != raw_len:
        raise CorruptPayload(f"解码长度 {len(out)} 与期望 {raw_len} 不符")
    return bytes(out)
