"""
性能指标
"""
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict


class Metric(str, Enum):
    LATENCY = 'latency'
    THROUGHPUT = 'throughput'
    SERVER_COST = 'server_cost'
    DEVICE_COST = 'device_cost'
    ACCURACY = 'accuracy'

    @property
    def unit(self) -> str:
        return METRIC_UNITS[self]

    @classmethod
    def parse(cls, name: str) -> 'Metric':
        key = name.strip().lower().replace('-', '_')
        return cls(METRIC_ALIASES.get(key, key))


METRIC_UNITS = {
    Metric.LATENCY: 'ms',
    Metric.THROUGHPUT: '/s',
    Metric.SERVER_COST: 'ms',
    Metric.DEVICE_COST: 'ms',
    Metric.ACCURACY: 'pp',
}

METRIC_ALIASES = {
    'server': 'server_cost',
    'device': 'device_cost',
    'acc': 'accuracy',
}


@dataclass(frozen=True)
class MetricVector:
    """
    单个配置的预测指标

    accuracy 以相对全精度的损失（百分点，>= 0）表示；
    net_time 与 pack_time 为延迟分解，不参与约束
    """
    latency: float
    throughput: float
    server_cost: float
    device_cost: float
    accuracy: float
    net_time: float = 0.0
    pack_time: float = 0.0

    def get(self, metric: Metric) -> float:
        return getattr(self, Metric(metric).value)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
