"""
剖析模块
离线校准剖析表、运行时负载缩放与网络估计
"""

from .calibration import CompressionRow, calibrate, compression_report, profile_layers
from .load import (
    LoadState,
    LoadTracker,
    predicted_prefix,
    predicted_suffix,
    scaling_factor,
    update_load,
    update_server_load,
)
from .network import (
    Ewma,
    LinkEstimate,
    NetworkEstimate,
    NetworkEstimator,
    estimate_transfer,
    observe_transfer,
)
from .profile_db import ProfileDB

__all__ = [
    'ProfileDB',
    'calibrate',
    'profile_layers',
    'compression_report',
    'CompressionRow',
    'LoadState',
    'LoadTracker',
    'scaling_factor',
    'update_load',
    'update_server_load',
    'predicted_prefix',
    'predicted_suffix',
    'Ewma',
    'LinkEstimate',
    'NetworkEstimate',
    'NetworkEstimator',
    'estimate_transfer',
    'observe_transfer',
]
