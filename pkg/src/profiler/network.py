"""
网络估计
同时维护实时与历史两组指数滑动平均；最近一次传输在新鲜窗口内时使用实时估计，
否则使用当前网络类型的历史估计
"""
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

from ..errors import NoEstimate

logger = logging.getLogger("dyno-network")


@dataclass
class Ewma:
    """指数滑动平均，首个观测直接作为初值"""
    alpha: float
    value: Optional[float] = None

    def update(self, x: float) -> float:
        if self.value is None:
            self.value = float(x)
        else:
            self.value = self.alpha * float(x) + (1.0 - self.alpha) * self.value
        return self.value


@dataclass(frozen=True)
class LinkEstimate:
    latency_ms: float
    bandwidth: float      # bytes/s
    source: str = 'historical'

    def transfer_ms(self, d: float) -> float:
        """传输耗时 L + d / B"""
        return self.latency_ms + d / self.bandwidth * 1000.0


@dataclass(frozen=True)
class NetworkEstimate:
    """估计器某一时刻的快照"""
    network_type: Optional[str]
    latency_rt: Optional[float]
    bandwidth_rt: Optional[float]
    latency_hist: Dict[str, Optional[float]] = field(default_factory=dict)
    bandwidth_hist: Dict[str, Optional[float]] = field(default_factory=dict)
    last_obs: Optional[float] = None


class NetworkEstimator:
    """网络时延 (ms) 与带宽 (bytes/s) 估计器"""

    def __init__(
        self,
        alpha_rt: float = 0.5,
        alpha_hist: float = 0.05,
        freshness_s: float = 300.0,
        history: Optional[Dict[str, Dict[str, float]]] = None,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.alpha_rt = alpha_rt
        self.alpha_hist = alpha_hist
        self.freshness_s = freshness_s
        self.clock = clock
        self._lock = threading.Lock()

        self.rt_type: Optional[str] = None
        self.rt_latency = Ewma(alpha_rt)
        self.rt_bandwidth = Ewma(alpha_rt)
        self.last_obs: Optional[float] = None

        self.hist_latency: Dict[str, Ewma] = {}
        self.hist_bandwidth: Dict[str, Ewma] = {}
        for net_type, seed in (history or {}).items():
            self.seed_history(net_type, seed.get('latency'), seed.get('bandwidth'))

    @classmethod
    def from_config(cls, config, clock: Callable[[], float] = time.monotonic) -> 'NetworkEstimator':
        return cls(
            alpha_rt=config.get('profiler.alpha_rt', 0.5),
            alpha_hist=config.get('profiler.alpha_hist', 0.05),
            freshness_s=config.get('profiler.freshness_s', 300.0),
            history=config.get('network.history') or {},
            clock=clock,
        )

    def seed_history(self, network_type: str, latency_ms: Optional[float], bandwidth: Optional[float]):
        """以配置值作为历史平均的初值"""
        if bandwidth is not None and bandwidth <= 0:
            raise ValueError(f"带宽必须大于 0: {bandwidth}")
        self.hist_latency[network_type] = Ewma(self.alpha_hist, None if latency_ms is None else float(latency_ms))
        self.hist_bandwidth[network_type] = Ewma(self.alpha_hist, None if bandwidth is None else float(bandwidth))

    def _fresh(self, network_type: str) -> bool:
        return (
            self.last_obs is not None
            and self.rt_type == network_type
            and self.clock() - self.last_obs <= self.freshness_s
        )

    def current(self, network_type: str) -> LinkEstimate:
        """当前网络类型下的 <L, B> 估计"""
        with self._lock:
            hist_l = self.hist_latency.get(network_type, Ewma(self.alpha_hist)).value
            hist_b = self.hist_bandwidth.get(network_type, Ewma(self.alpha_hist)).value
            if self._fresh(network_type):
                latency = self.rt_latency.value if self.rt_latency.value is not None else hist_l
                bandwidth = self.rt_bandwidth.value if self.rt_bandwidth.value is not None else hist_b
                source = 'realtime'
            else:
                latency, bandwidth, source = hist_l, hist_b, 'historical'
        if latency is None or bandwidth is None:
            raise NoEstimate(f"网络类型 {network_type} 没有可用的时延/带宽估计")
        return LinkEstimate(latency_ms=latency, bandwidth=bandwidth, source=source)

    def estimate_transfer(self, d: float, network_type: str) -> float:
        """传输 d 字节的预测耗时 (ms)"""
        return self.current(network_type).transfer_ms(d)

    def observe_transfer(
        self,
        bytes_sent: int,
        duration_ms: float,
        network_type: str,
        latency_ms: Optional[float] = None,
    ) -> NetworkEstimate:
        """
        记录一次传输

        bytes_sent 为 0 时视为一次纯时延测量；给出 latency_ms 时从耗时中扣除时延后计算带宽
        """
        if duration_ms <= 0:
            raise ValueError(f"传输耗时必须大于 0: {duration_ms}")
        with self._lock:
            if self.rt_type != network_type:
                # 网络类型切换，实时估计重新开始
                self.rt_type = network_type
                self.rt_latency = Ewma(self.alpha_rt)
                self.rt_bandwidth = Ewma(self.alpha_rt)

            hist_l = self.hist_latency.setdefault(network_type, Ewma(self.alpha_hist))
            hist_b = self.hist_bandwidth.setdefault(network_type, Ewma(self.alpha_hist))

            if bytes_sent == 0:
                latency_ms = duration_ms if latency_ms is None else latency_ms
            if latency_ms is not None:
                self.rt_latency.update(latency_ms)
                hist_l.update(latency_ms)

            if bytes_sent > 0:
                transfer_ms = duration_ms - (latency_ms or 0.0)
                if transfer_ms > 0:
                    bandwidth = bytes_sent / transfer_ms * 1000.0
                    self.rt_bandwidth.update(bandwidth)
                    hist_b.update(bandwidth)

            self.last_obs = self.clock()
            return self._snapshot()

    def observe_latency(self, latency_ms: float, network_type: str) -> NetworkEstimate:
        return self.observe_transfer(0, latency_ms, network_type)

    def _snapshot(self) -> NetworkEstimate:
        return NetworkEstimate(
            network_type=self.rt_type,
            latency_rt=self.rt_latency.value,
            bandwidth_rt=self.rt_bandwidth.value,
            latency_hist={k: v.value for k, v in self.hist_latency.items()},
            bandwidth_hist={k: v.value for k, v in self.hist_bandwidth.items()},
            last_obs=self.last_obs,
        )

    def snapshot(self) -> NetworkEstimate:
        with self._lock:
            return self._snapshot()


def estimate_transfer(net: NetworkEstimator, d: float, network_type: str) -> float:
    return net.estimate_transfer(d, network_type)


def observe_transfer(
    net: NetworkEstimator, bytes_sent: int, duration_ms: float, network_type: str,
    latency_ms: Optional[float] = None,
) -> NetworkEstimate:
    return net.observe_transfer(bytes_sent, duration_ms, network_type, latency_ms)
