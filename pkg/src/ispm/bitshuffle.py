"""
位平面重排
第 j 个平面收集所有量化值的第 j 位，使相同权重的位连续存放，便于 LZ 类压缩
布局：平面按 LSB 优先排列，每个平面 ceil(N/8) 字节，字节内 LSB 优先，末字节补零
"""
import numpy as np

from ..errors import CorruptPayload, ValueOverflow


def plane_bytes(n: int) -> int:
    return (n + 7) // 8


def bitshuffle(q: np.ndarray, b: int) -> bytes:
    q = np.asarray(q).ravel()
    if q.size:
        if q.min() < 0 or int(q.max()) >= (1 << b):
            raise ValueOverflow(f"量化值超出 {b} 位范围")
    values = q.astype(np.uint32)
    shifts = np.arange(b, dtype=np.uint32)[:, None]
    bits = ((values[None, :] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits, axis=1, bitorder='little').tobytes()


def bitunshuffle(data: bytes, b: int, n: int) -> np.ndarray:
    """bitshuffle 的逆变换，返回长度为 n 的 uint16 数组"""
    width = plane_bytes(n)
    if len(data) != b * width:
        raise CorruptPayload(f"位平面数据长度 {len(data)} 与期望 {b * width} 不符")
    planes = np.frombuffer(data, dtype=np.uint8).reshape(b, width)
    bits = np.unpackbits(planes, axis=1, count=n, bitorder='little').astype(np.uint32)
    shifts = np.arange(b, dtype=np.uint32)[:, None]
    return (bits << shifts).sum(axis=0).astype(np.uint16)
