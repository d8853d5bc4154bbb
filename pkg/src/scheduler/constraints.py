"""
硬约束与软目标
硬约束形如 "latency<=100ms"、"accuracy<=1pp"、"throughput>=20/s"、"latency=100±5ms"；
软目标形如 "min:server_cost"、"max:throughput"、"approach:latency:80"
"""
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional

import numpy as np

from ..errors import ConfigError
from .metrics import Metric

VIOLATION_EPS = 1e-9

_HARD_RE = re.compile(
    r"""^\s*(?P<metric>[a-z_\-]+)\s*
        (?P<op><=|>=|≤|≥|=)\s*
        (?P<thr>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*
        (?:(?:±|\+-|\+/-)\s*(?P<eps>(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?))?\s*
        (?P<unit>ms|pp|%|/s)?\s*$""",
    re.VERBOSE | re.IGNORECASE,
)

_UNIT_ALIASES = {'%': 'pp'}


class Op(str, Enum):
    LE = '<='
    GE = '>='
    APPROX = '='


class Goal(str, Enum):
    MIN = 'min'
    MAX = 'max'
    APPROACH = 'approach'


@dataclass(frozen=True)
class HardConstraint:
    metric: Metric
    op: Op
    thr: float
    eps: float = 0.0

    def satisfied(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if self.op == Op.LE:
            return values <= self.thr
        if self.op == Op.GE:
            return values >= self.thr
        return np.abs(values - self.thr) <= self.eps

    def violation(self, values: np.ndarray) -> np.ndarray:
        """归一化违反程度 |v - thr| / max(|thr|, eps)"""
        values = np.asarray(values, dtype=np.float64)
        return np.abs(values - self.thr) / max(abs(self.thr), VIOLATION_EPS)

    def __str__(self):
        tail = f"±{self.eps:g}" if self.op == Op.APPROX else ""
        return f"{self.metric.value}{self.op.value}{self.thr:g}{tail}{self.metric.unit}"


@dataclass(frozen=True)
class SoftTarget:
    metric: Metric
    goal: Goal
    value: Optional[float] = None

    def sort_key(self, values: np.ndarray) -> np.ndarray:
        """升序排序键"""
        values = np.asarray(values, dtype=np.float64)
        if self.goal == Goal.MIN:
            return values
        if self.goal == Goal.MAX:
            return -values
        return np.abs(values - self.value)

    def __str__(self):
        if self.goal == Goal.APPROACH:
            return f"approach:{self.metric.value}:{self.value:g}"
        return f"{self.goal.value}:{self.metric.value}"


def _metric(name: str, expr: str) -> Metric:
    try:
        return Metric.parse(name)
    except ValueError:
        choices = ', '.join(m.value for m in Metric)
        raise ConfigError(f"约束 {expr!r} 中的指标 {name!r} 未知，可选: {choices}") from None


def parse_hard_constraint(expr: str) -> HardConstraint:
    m = _HARD_RE.match(expr or '')
    if not m:
        raise ConfigError(f"无法解析硬约束: {expr!r}")
    metric = _metric(m.group('metric'), expr)

    op = {'≤': Op.LE, '≥': Op.GE}.get(m.group('op'), Op(m.group('op')))
    eps = float(m.group('eps')) if m.group('eps') is not None else 0.0
    if m.group('eps') is not None and op != Op.APPROX:
        raise ConfigError(f"只有 '=' 约束可以带容差: {expr!r}")

    unit = m.group('unit')
    if unit is not None:
        unit = _UNIT_ALIASES.get(unit.lower(), unit.lower())
        if unit != metric.unit:
            raise ConfigError(f"约束 {expr!r} 的单位 {unit} 与指标 {metric.value} 的单位 {metric.unit} 不符")
    return HardConstraint(metric=metric, op=op, thr=float(m.group('thr')), eps=eps)


def parse_soft_target(expr: str) -> SoftTarget:
    parts = [p.strip() for p in (expr or '').split(':')]
    try:
        goal = Goal(parts[0].lower())
    except ValueError:
        raise ConfigError(f"无法解析软目标: {expr!r}（应为 min:x、max:x 或 approach:x:v）") from None

    if goal == Goal.APPROACH:
        if len(parts) != 3:
            raise ConfigError(f"approach 目标需要目标值: {expr!r}")
        try:
            value = float(parts[2])
        except ValueError:
            raise ConfigError(f"approach 目标值无效: {expr!r}") from None
        return SoftTarget(metric=_metric(parts[1], expr), goal=goal, value=value)

    if len(parts) != 2:
        raise ConfigError(f"无法解析软目标: {expr!r}")
    return SoftTarget(metric=_metric(parts[1], expr), goal=goal)


def parse_constraints(exprs: Iterable[str]) -> List[HardConstraint]:
    return [parse_hard_constraint(e) for e in exprs or []]


def parse_targets(exprs: Iterable[str]) -> List[SoftTarget]:
    """解析软目标列表，每个指标至多出现一次"""
    targets = [parse_soft_target(e) for e in exprs or []]
    seen = set()
    for t in targets:
        if t.metric in seen:
            raise ConfigError(f"指标 {t.metric.value} 在软目标中重复出现")
        seen.add(t.metric)
    return targets
