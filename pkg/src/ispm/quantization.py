"""
输入相关量化（ISQuant）
每个张量、每个输入在运行时根据实际 min/max 计算缩放指数 s，
量化: q = round_half_even((d - min) * 2^s)，反量化: d = q / 2^s + min
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import HeaderMismatch, NonFiniteInput

PASSTHROUGH = 32
MIN_BITWIDTH = 1
MAX_BITWIDTH = 16


@dataclass(frozen=True)
class QuantHeader:
    """量化头：val_min 与 scale_exp 均为 float32 可表示的值"""
    val_min: float
    scale_exp: float
    constant: bool = False

    def val_max(self, b: int) -> float:
        """由头部恢复 val_max = val_min + (2^b - 1) * 2^(-s)"""
        if self.constant:
            return self.val_min
        return self.val_min + ((1 << b) - 1) * 2.0 ** (-self.scale_exp)


def check_bitwidth(b: int):
    if not isinstance(b, (int, np.integer)) or not MIN_BITWIDTH <= b <= MAX_BITWIDTH:
        raise ValueError(f"位宽必须位于 [{MIN_BITWIDTH}, {MAX_BITWIDTH}]: {b}")


def isquant(t: np.ndarray, b: int) -> Tuple[QuantHeader, np.ndarray]:
    """
    对单个张量做输入相关量化

    Returns:
        (量化头, 展平的 uint16 量化值)；常量张量返回空数组
    """
    check_bitwidth(b)
    t = np.asarray(t, dtype=np.float32)
    if not np.all(np.isfinite(t)):
        raise NonFiniteInput("张量包含非有限值，无法量化")

    val_min = float(t.min())
    val_max = float(t.max())
    if val_max == val_min:
        # 值域为 0，缩放因子无定义
        return QuantHeader(val_min=val_min, scale_exp=0.0, constant=True), np.empty(0, dtype=np.uint16)

    levels = (1 << b) - 1
    multiplier = levels / (val_max - val_min)
    scale_exp = float(np.float32(np.log2(multiplier)))

    scaled = (t.astype(np.float64).ravel() - val_min) * multiplier
    q = np.clip(np.rint(scaled), 0, levels).astype(np.uint16)
    return QuantHeader(val_min=val_min, scale_exp=scale_exp), q


def dequant(header: QuantHeader, q: np.ndarray, shape: Optional[Sequence[int]] = None) -> np.ndarray:
    """反量化；常量张量需要 shape 指定元素个数"""
    q = np.asarray(q)
    if header.constant:
        if q.size:
            raise HeaderMismatch("常量张量不应携带量化数据")
        if shape is None:
            raise HeaderMismatch("常量张量反量化需要形状")
        return np.full(tuple(shape), np.float32(header.val_min), dtype=np.float32)

    n = int(np.prod(shape)) if shape is not None else q.size
    if q.size != n:
        raise HeaderMismatch(f"量化数据长度 {q.size} 与形状 {tuple(shape)} 不符")

    step = 2.0 ** (-header.scale_exp)
    out = (q.astype(np.float64) * step + header.val_min).astype(np.float32)
    return out.reshape(tuple(shape)) if shape is not None else out


def error_bound(val_min: float, val_max: float, b: int) -> float:
    """逐元素重建误差的解析上界 0.5 * (max - min) / (2^b - 1)"""
    if b == PASSTHROUGH:
        return 0.0
    return 0.5 * (val_max - val_min) / ((1 << b) - 1)
