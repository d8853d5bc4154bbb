"""
运行时负载缩放
缩放因子 SF = 实测耗时 / 离线耗时，作为设备负载的代理，用于预测其它切分点的耗时
"""
import logging
import threading
from dataclasses import dataclass, replace
from typing import Optional

from ..errors import ZeroOfflineTime
from .profile_db import ProfileDB

logger = logging.getLogger("dyno-profiler")


@dataclass(frozen=True)
class LoadState:
    """客户端与服务端的缩放因子，校准条件下均为 1"""
    sf_client: float = 1.0
    sf_server: float = 1.0


def scaling_factor(measured_ms: float, offline_ms: float) -> float:
    if offline_ms <= 0:
        raise ZeroOfflineTime(f"离线耗时为 {offline_ms} ms，无法计算缩放因子")
    return measured_ms / offline_ms


def update_load(
    profile: ProfileDB, measured_ms_for_prefix_s: float, s: int, state: Optional[LoadState] = None
) -> LoadState:
    """由客户端前缀 [0, s] 的实测耗时更新 SF_client"""
    state = state or LoadState()
    sf = scaling_factor(measured_ms_for_prefix_s, profile.prefix_time(s))
    return replace(state, sf_client=sf)


def update_server_load(
    profile: ProfileDB, measured_server_ms: float, s: int, state: Optional[LoadState] = None
) -> LoadState:
    """由服务端回报的区间 (s, N] 耗时更新 SF_server"""
    state = state or LoadState()
    sf = scaling_factor(measured_server_ms, profile.suffix_time(s))
    return replace(state, sf_server=sf)


def predicted_prefix(profile: ProfileDB, load: LoadState, s: int) -> float:
    return load.sf_client * profile.prefix_time(s)


def predicted_suffix(profile: ProfileDB, load: LoadState, s: int) -> float:
    return load.sf_server * profile.suffix_time(s)


class LoadTracker:
    """线程安全地持有当前负载状态，单写多读"""

    def __init__(self, profile: ProfileDB, state: Optional[LoadState] = None):
        self.profile = profile
        self._state = state or LoadState()
        self._lock = threading.Lock()

    @property
    def state(self) -> LoadState:
        with self._lock:
            return self._state

    def observe_client(self, measured_ms: float, s: int) -> LoadState:
        if self.profile.prefix_time(s) <= 0:
            # 该前缀没有离线耗时可参照，保持原状态
            return self.state
        with self._lock:
            self._state = update_load(self.profile, measured_ms, s, self._state)
            logger.debug(f"SF_client 更新为 {self._state.sf_client:.3f} (s={s})")
            return self._state

    def observe_server(self, measured_ms: float, s: int) -> LoadState:
        if self.profile.suffix_time(s) <= 0:
            return self.state
        with self._lock:
            self._state = update_server_load(self.profile, measured_ms, s, self._state)
            logger.debug(f"SF_server 更新为 {self._state.sf_server:.3f} (s={s})")
            return self._state
