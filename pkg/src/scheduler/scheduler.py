"""
动态调度器
按优先级依次用硬约束筛除配置；若某个约束使可行集为空，立即返回在此之前可行集中最接近该约束的配置；
否则按软目标字典序排序取第一个，平局时取更大的 s，再取更小的位宽
"""
import logging
import time
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError, EmptySpace
from ..profiler.load import LoadState
from ..profiler.network import LinkEstimate
from ..profiler.profile_db import ProfileDB
from .constraints import HardConstraint, SoftTarget
from .cost_model import ConfigSpace, metric_vector_at, predict_space
from .metrics import MetricVector

logger = logging.getLogger("dyno-scheduler")

RESCHEDULE_THRESHOLD = 0.05


@dataclass(frozen=True)
class ScheduleDecision:
    s_star: int
    c_star: int
    predicted: MetricVector
    best_effort: bool = False
    violated: Optional[HardConstraint] = None
    elapsed_ms: float = 0.0

    @property
    def config(self):
        return self.s_star, self.c_star


@dataclass(frozen=True)
class ProfilerSnapshot:
    """调度器重新调用判定所观察的量"""
    latency_ms: float
    bandwidth: float
    sf_client: float
    sf_server: float

    @classmethod
    def of(cls, net: LinkEstimate, load: LoadState) -> 'ProfilerSnapshot':
        return cls(
            latency_ms=net.latency_ms,
            bandwidth=net.bandwidth,
            sf_client=load.sf_client,
            sf_server=load.sf_server,
        )


def _order(space: ConfigSpace, idx: np.ndarray, metrics, targets: Sequence[SoftTarget]) -> np.ndarray:
    """idx 按软目标字典序排列，再按 s 降序、位宽升序"""
    keys = [space.bitwidths[idx], -space.splits[idx]]
    for target in reversed(targets):
        keys.append(target.sort_key(metrics[target.metric][idx]))
    # np.lexsort 以最后一个键为主键
    return idx[np.lexsort(keys)]


def schedule(
    space: ConfigSpace,
    constraints: Sequence[HardConstraint],
    targets: Sequence[SoftTarget],
    net: LinkEstimate,
    load: LoadState,
    profile: ProfileDB,
    pipelined: bool = False,
) -> ScheduleDecision:
    if len(space) == 0:
        raise EmptySpace("配置空间为空")
    if not targets:
        raise ConfigError("至少需要一个软目标")

    start = time.perf_counter()
    metrics = predict_space(profile, net, load, space, pipelined)
    idx = np.arange(len(space))

    for c in constraints:
        values = metrics[c.metric][idx]
        ok = c.satisfied(values)
        if ok.any():
            idx = idx[ok]
            continue

        # 没有配置满足该约束，返回违反程度最小的配置
        violation = c.violation(values)
        closest = idx[violation == violation.min()]
        best = int(_order(space, closest, metrics, targets)[0])
        decision = ScheduleDecision(
            s_star=int(space.splits[best]),
            c_star=int(space.bitwidths[best]),
            predicted=metric_vector_at(metrics, best),
            best_effort=True,
            violated=c,
            elapsed_ms=(time.perf_counter() - start) * 1000.0,
        )
        logger.warning(f"约束 {c} 无法满足，尽力返回 <s={decision.s_star}, b={decision.c_star}>")
        return decision

    best = int(_order(space, idx, metrics, targets)[0])
    decision = ScheduleDecision(
        s_star=int(space.splits[best]),
        c_star=int(space.bitwidths[best]),
        predicted=metric_vector_at(metrics, best),
        elapsed_ms=(time.perf_counter() - start) * 1000.0,
    )
    logger.debug(
        f"调度结果 <s={decision.s_star}, b={decision.c_star}>，"
        f"可行配置 {idx.size}/{len(space)}，耗时 {decision.elapsed_ms:.2f}ms"
    )
    return decision


def _relative_change(prev: float, cur: float) -> float:
    if prev == 0:
        return 0.0 if cur == 0 else float('inf')
    return abs(cur - prev) / abs(prev)


def should_reschedule(
    prev_inputs: ProfilerSnapshot,
    cur_inputs: ProfilerSnapshot,
    threshold: float = RESCHEDULE_THRESHOLD,
    forced: bool = False,
) -> bool:
    """任一观察量相对上次调度时变化超过 threshold，或被强制（如截止时间严重超时）"""
    if forced:
        return True
    return any(
        _relative_change(getattr(prev_inputs, f.name), getattr(cur_inputs, f.name)) > threshold
        for f in fields(ProfilerSnapshot)
    )
