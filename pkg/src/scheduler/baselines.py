"""
对比基线
neurosurgeon: 只切分不量化（PASSTHROUGH），单目标最小化延迟
client-only / server-only: 固定在设备端或服务端完整执行
"""
from typing import Callable, Dict, Optional, Sequence

from ..ispm.quantization import PASSTHROUGH
from ..profiler.load import LoadState
from ..profiler.network import LinkEstimate
from ..profiler.profile_db import ProfileDB
from .constraints import HardConstraint, SoftTarget, parse_soft_target
from .cost_model import ConfigSpace, predict_metrics
from .scheduler import ScheduleDecision, schedule


def _fixed(profile: ProfileDB, net: LinkEstimate, load: LoadState, s: int, pipelined: bool) -> ScheduleDecision:
    return ScheduleDecision(
        s_star=s,
        c_star=PASSTHROUGH,
        predicted=predict_metrics(profile, net, load, (s, PASSTHROUGH), pipelined),
    )


def client_only(profile: ProfileDB, net: LinkEstimate, load: LoadState, pipelined: bool = False, **_) -> ScheduleDecision:
    return _fixed(profile, net, load, profile.N, pipelined)


def server_only(profile: ProfileDB, net: LinkEstimate, load: LoadState, pipelined: bool = False, **_) -> ScheduleDecision:
    return _fixed(profile, net, load, 0, pipelined)


def neurosurgeon(profile: ProfileDB, net: LinkEstimate, load: LoadState, pipelined: bool = False, **_) -> ScheduleDecision:
    space = ConfigSpace.from_profile(profile, bitwidths=[PASSTHROUGH])
    return schedule(space, [], [parse_soft_target('min:latency')], net, load, profile, pipelined)


def dyno(
    profile: ProfileDB,
    net: LinkEstimate,
    load: LoadState,
    pipelined: bool = False,
    constraints: Optional[Sequence[HardConstraint]] = None,
    targets: Optional[Sequence[SoftTarget]] = None,
    space: Optional[ConfigSpace] = None,
) -> ScheduleDecision:
    """完整配置空间上的调度"""
    space = space if space is not None else ConfigSpace.from_profile(profile)
    targets = list(targets) if targets else [parse_soft_target('min:latency')]
    return schedule(space, list(constraints or []), targets, net, load, profile, pipelined)


VARIANTS: Dict[str, Callable[..., ScheduleDecision]] = {
    'dyno': dyno,
    'neurosurgeon': neurosurgeon,
    'client-only': client_only,
    'server-only': server_only,
}
