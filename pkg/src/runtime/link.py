"""
链路仿真
每条消息注入单向时延与串行化时延 bytes / bandwidth，上下行对称；默认无抖动，可选带种子的抖动
"""
import logging
import threading
import time
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import ConfigError

logger = logging.getLogger("dyno-link")


class LinkModel(BaseModel):
    """链路参数：带宽 bytes/s，单向时延 ms"""
    model_config = ConfigDict(frozen=True)

    name: str = 'custom'
    bandwidth: float = Field(gt=0)
    latency: float = Field(default=0.0, ge=0)
    jitter_ms: float = Field(default=0.0, ge=0)

    def delay_ms(self, nbytes: int) -> float:
        return self.latency + nbytes / self.bandwidth * 1000.0

    @classmethod
    def from_mbps(cls, mbps: float, latency: float, name: str = 'custom') -> 'LinkModel':
        return cls(name=name, bandwidth=mbps * 1e6 / 8.0, latency=latency)


def emulate_link(link: LinkModel, nbytes: int) -> float:
    """单向投递 nbytes 的仿真时延 (ms)"""
    return link.delay_ms(nbytes)


class LinkEmulator:
    """
    在发送/接收路径上按链路模型休眠

    上行与下行各自串行，同一方向的消息依次占用链路
    """

    def __init__(
        self,
        link: LinkModel,
        jitter_seed: Optional[int] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.link = link
        self._sleep = sleep
        self._rng = np.random.default_rng(jitter_seed) if link.jitter_ms > 0 else None
        self._uplink = threading.Lock()
        self._downlink = threading.Lock()

    @property
    def name(self) -> str:
        return self.link.name

    def delay_ms(self, nbytes: int) -> float:
        delay = self.link.delay_ms(nbytes)
        if self._rng is not None:
            delay += float(self._rng.uniform(0.0, self.link.jitter_ms))
        return delay

    def _transmit(self, lock: threading.Lock, nbytes: int) -> float:
        with lock:
            delay = self.delay_ms(nbytes)
            self._sleep(delay / 1000.0)
        return delay

    def uplink(self, nbytes: int) -> float:
        return self._transmit(self._uplink, nbytes)

    def downlink(self, nbytes: int) -> float:
        return self._transmit(self._downlink, nbytes)


def resolve_link(config, name: Optional[str] = None) -> LinkModel:
    """按名称从配置中取链路模型，缺省为 network.type"""
    links = config.link_models()
    name = name or config.get('network.type')
    if name not in links:
        raise ConfigError(f"未知链路: {name}，可选: {sorted(links)}")
    link = links[name]
    jitter = config.get('network.jitter_ms', 0.0) or 0.0
    if jitter and not link.jitter_ms:
        link = link.model_copy(update={'jitter_ms': float(jitter)})
    return link
