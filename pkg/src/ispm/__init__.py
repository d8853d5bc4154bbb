"""
中间张量打包模块
输入相关量化、位平面重排、无损压缩及其逆过程
"""

from .bitshuffle import bitshuffle, bitunshuffle
from .codecs import CODECS, Codec, CodecId, compress, decompress, get_codec
from .lz4_reference import decode_block
from .packing import (
    PackedTensor,
    PackingPolicy,
    pack,
    pack_dependencies,
    serialized_size,
    unpack,
    unpack_dependencies,
)
from .quantization import PASSTHROUGH, QuantHeader, dequant, error_bound, isquant

__all__ = [
    'PASSTHROUGH',
    'QuantHeader',
    'isquant',
    'dequant',
    'error_bound',
    'bitshuffle',
    'bitunshuffle',
    'Codec',
    'CodecId',
    'CODECS',
    'get_codec',
    'compress',
    'decompress',
    'decode_block',
    'PackingPolicy',
    'PackedTensor',
    'pack',
    'unpack',
    'pack_dependencies',
    'unpack_dependencies',
    'serialized_size',
]
