"""
调度模块
指标预测、约束解析、配置选择与对比基线
"""

from .baselines import VARIANTS, client_only, dyno, neurosurgeon, server_only
from .constraints import (
    Goal,
    HardConstraint,
    Op,
    SoftTarget,
    parse_constraints,
    parse_hard_constraint,
    parse_soft_target,
    parse_targets,
)
from .cost_model import BreakdownRow, ConfigSpace, predict_metrics, predict_space, split_breakdown
from .metrics import Metric, MetricVector
from .scheduler import ProfilerSnapshot, ScheduleDecision, schedule, should_reschedule

__all__ = [
    'Metric',
    'MetricVector',
    'Op',
    'Goal',
    'HardConstraint',
    'SoftTarget',
    'parse_hard_constraint',
    'parse_soft_target',
    'parse_constraints',
    'parse_targets',
    'ConfigSpace',
    'predict_metrics',
    'predict_space',
    'split_breakdown',
    'BreakdownRow',
    'ScheduleDecision',
    'ProfilerSnapshot',
    'schedule',
    'should_reschedule',
    'VARIANTS',
    'dyno',
    'neurosurgeon',
    'client_only',
    'server_only',
]
