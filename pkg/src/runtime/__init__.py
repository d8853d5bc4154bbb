"""
运行时模块
线路协议、链路仿真、服务端、客户端、流水线与自适应控制
"""

from .client import DynoClient, Exchange, TimingRecord, client_infer, response_logits
from .controller import AdaptiveController, BatchSummary, ControllerReport
from .link import LinkEmulator, LinkModel, emulate_link, resolve_link
from .pipeline import PipelineReport, Stage, StagedPipeline, run_pipelined, run_sequential
from .protocol import MsgType, WireMessage, decode_message, encode_message, frame
from .server import InferenceServer, ServerThread, run_server

__all__ = [
    'MsgType',
    'WireMessage',
    'encode_message',
    'decode_message',
    'frame',
    'LinkModel',
    'LinkEmulator',
    'emulate_link',
    'resolve_link',
    'InferenceServer',
    'ServerThread',
    'run_server',
    'DynoClient',
    'Exchange',
    'TimingRecord',
    'client_infer',
    'response_logits',
    'Stage',
    'StagedPipeline',
    'PipelineReport',
    'run_pipelined',
    'run_sequential',
    'AdaptiveController',
    'BatchSummary',
    'ControllerReport',
]
