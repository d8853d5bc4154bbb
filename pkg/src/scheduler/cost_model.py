"""
代价模型
由剖析表、当前网络估计与负载缩放因子预测每个 <s, b> 配置的指标；
predict_space 以数组形式一次算出整个配置空间
"""
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import EmptySpace, MissingProfileEntry
from ..profiler.load import LoadState
from ..profiler.network import LinkEstimate
from ..profiler.profile_db import ProfileDB
from .metrics import Metric, MetricVector


@dataclass(frozen=True)
class ConfigSpace:
    """配置空间：splits[i] 与 bitwidths[i] 组成第 i 个配置"""
    splits: np.ndarray
    bitwidths: np.ndarray

    def __len__(self) -> int:
        return int(self.splits.size)

    def __getitem__(self, i: int) -> Tuple[int, int]:
        return int(self.splits[i]), int(self.bitwidths[i])

    def configs(self) -> List[Tuple[int, int]]:
        return [self[i] for i in range(len(self))]

    @classmethod
    def of(cls, configs: Iterable[Tuple[int, int]]) -> 'ConfigSpace':
        pairs = list(configs)
        return cls(
            splits=np.array([s for s, _ in pairs], dtype=np.int64),
            bitwidths=np.array([b for _, b in pairs], dtype=np.int64),
        )

    @classmethod
    def from_profile(
        cls,
        profile: ProfileDB,
        splits: Optional[Sequence[int]] = None,
        bitwidths: Optional[Sequence[int]] = None,
    ) -> 'ConfigSpace':
        """剖析表覆盖的全部配置，可按切分点或位宽子集过滤"""
        allowed_s = set(splits) if splits is not None else None
        allowed_b = set(bitwidths) if bitwidths is not None else None
        return cls.of(
            (s, b) for s, b in profile.configurations()
            if (allowed_s is None or s in allowed_s) and (allowed_b is None or b in allowed_b)
        )


def _transfer_ms(net: LinkEstimate, nbytes):
    return net.latency_ms + nbytes / net.bandwidth * 1000.0


def _stage_times(profile: ProfileDB, net: LinkEstimate, load: LoadState, s: int, b: int):
    entry = profile.entry(s, b)
    device = load.sf_client * profile.prefix_time(s) + entry['t_pack']
    if s == profile.N:
        net_time, server = 0.0, 0.0
    else:
        # 上行依赖加下行 logits
        net_time = _transfer_ms(net, entry['d_size']) + _transfer_ms(net, profile.d_response)
        server = load.sf_server * profile.suffix_time(s)
    return device, net_time, server, entry


def predict_metrics(
    profile: ProfileDB, net: LinkEstimate, load: LoadState, config: Tuple[int, int], pipelined: bool = False
) -> MetricVector:
    s, b = config
    device, net_time, server, entry = _stage_times(profile, net, load, s, b)
    latency = device + net_time + server
    bottleneck = max(device, net_time, server) if pipelined else latency
    return MetricVector(
        latency=latency,
        throughput=1000.0 / max(bottleneck, 1e-9),
        server_cost=server,
        device_cost=device,
        accuracy=entry['acc_delta'],
        net_time=net_time,
        pack_time=entry['t_pack'],
    )


def predict_space(
    profile: ProfileDB, net: LinkEstimate, load: LoadState, space: ConfigSpace, pipelined: bool = False
) -> Dict[Metric, np.ndarray]:
    """整个配置空间的指标数组，按 Metric 索引（另含 'net_time'、'pack_time'）"""
    n = len(space)
    if n == 0:
        raise EmptySpace("配置空间为空")

    unique_s = sorted(set(int(s) for s in space.splits))
    prefix = {s: profile.prefix_time(s) for s in unique_s}
    suffix = {s: profile.suffix_time(s) for s in unique_s}

    t_pack = np.empty(n)
    d_size = np.empty(n)
    acc = np.empty(n)
    for i, (s, b) in enumerate(space.configs()):
        entry = profile.entry(s, b)
        t_pack[i], d_size[i], acc[i] = entry['t_pack'], entry['d_size'], entry['acc_delta']

    pre = np.array([prefix[int(s)] for s in space.splits])
    suf = np.array([suffix[int(s)] for s in space.splits])
    client_only = space.splits == profile.N

    device = load.sf_client * pre + t_pack
    net_time = np.where(client_only, 0.0, _transfer_ms(net, d_size) + _transfer_ms(net, profile.d_response))
    server = np.where(client_only, 0.0, load.sf_server * suf)
    latency = device + net_time + server
    if pipelined:
        bottleneck = np.maximum(np.maximum(device, net_time), server)
    else:
        bottleneck = latency
    throughput = 1000.0 / np.maximum(bottleneck, 1e-9)

    return {
        Metric.LATENCY: latency,
        Metric.THROUGHPUT: throughput,
        Metric.SERVER_COST: server,
        Metric.DEVICE_COST: device,
        Metric.ACCURACY: acc,
        'net_time': net_time,
        'pack_time': t_pack,
    }


def metric_vector_at(metrics: Dict, i: int) -> MetricVector:
    return MetricVector(
        latency=float(metrics[Metric.LATENCY][i]),
        throughput=float(metrics[Metric.THROUGHPUT][i]),
        server_cost=float(metrics[Metric.SERVER_COST][i]),
        device_cost=float(metrics[Metric.DEVICE_COST][i]),
        accuracy=float(metrics[Metric.ACCURACY][i]),
        net_time=float(metrics['net_time'][i]),
        pack_time=float(metrics['pack_time'][i]),
    )


@dataclass(frozen=True)
class BreakdownRow:
    """单个切分点在最低可行位宽下的延迟分解"""
    s: int
    bitwidth: int
    device_ms: float
    pack_ms: float
    net_ms: float
    server_ms: float
    latency_ms: float
    d_size: float
    acc_delta: float


def split_breakdown(
    profile: ProfileDB,
    net: LinkEstimate,
    load: LoadState,
    allowance_pp: float = 1.0,
    splits: Optional[Sequence[int]] = None,
) -> List[BreakdownRow]:
    """每个切分点取精度损失不超过 allowance_pp 的最低位宽，给出各阶段耗时"""
    rows = []
    for s in splits if splits is not None else profile.splits:
        try:
            b = profile.lowest_bitwidth(s, allowance_pp)
        except MissingProfileEntry:
            continue
        mv = predict_metrics(profile, net, load, (s, b))
        rows.append(BreakdownRow(
            s=s,
            bitwidth=b,
            device_ms=mv.device_cost - mv.pack_time,
            pack_ms=mv.pack_time,
            net_ms=mv.net_time,
            server_ms=mv.server_cost,
            latency_ms=mv.latency,
            d_size=profile.d_size[s][b],
            acc_delta=mv.accuracy,
        ))
    return rows
