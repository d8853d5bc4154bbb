"""
剖析数据库
保存离线校准得到的逐层耗时、打包耗时、依赖大小与精度损失，
以规范化 JSON 持久化（键排序、固定缩进），加载后再保存逐字节一致
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from ..errors import ConfigError, MissingProfileEntry

PROFILE_FORMAT = "dyno-profile"
PROFILE_VERSION = 1

logger = logging.getLogger("dyno-profiler")

Table = Dict[int, Dict[int, float]]


@dataclass
class ProfileDB:
    """
    剖析表

    t_layer_offline[unit][id]: 各处理单元上每层耗时 (ms)
    t_server[id]: 服务端每层耗时 (ms)
    t_pack[s][b]: 打包耗时 (ms)
    d_size[s][b]: 序列化后依赖总字节数的均值
    acc_delta[s][b]: 相对全精度的 top-1 一致性损失（百分点）
    d_response: 服务端返回的 logits 张量字节数
    """
    model_name: str
    N: int
    splits: List[int]
    bitwidths: List[int]
    unit: str = 'cpu'
    t_layer_offline: Dict[str, Dict[int, float]] = field(default_factory=dict)
    t_server: Dict[int, float] = field(default_factory=dict)
    t_pack: Table = field(default_factory=dict)
    d_size: Table = field(default_factory=dict)
    acc_delta: Table = field(default_factory=dict)
    d_response: float = 0.0
    calibration_count: int = 0

    # ---- 查询 ----

    def layer_times(self, unit: Optional[str] = None) -> Dict[int, float]:
        unit = unit or self.unit
        if unit not in self.t_layer_offline:
            raise MissingProfileEntry(f"剖析表中没有处理单元 {unit} 的耗时")
        return self.t_layer_offline[unit]

    def prefix_time(self, s: int, unit: Optional[str] = None) -> float:
        """客户端执行 [0, s] 的离线耗时"""
        times = self.layer_times(unit)
        return float(sum(times.get(i, 0.0) for i in range(s + 1)))

    def suffix_time(self, s: int) -> float:
        """服务端执行 (s, N] 的离线耗时"""
        return float(sum(self.t_server.get(i, 0.0) for i in range(s + 1, self.N + 1)))

    def entry(self, s: int, b: int) -> Dict[str, float]:
        try:
            return {
                't_pack': self.t_pack[s][b],
                'd_size': self.d_size[s][b],
                'acc_delta': self.acc_delta[s][b],
            }
        except KeyError as e:
            raise MissingProfileEntry(f"剖析表缺少配置 <s={s}, b={b}>") from e

    def has_entry(self, s: int, b: int) -> bool:
        return all(b in table.get(s, {}) for table in (self.t_pack, self.d_size, self.acc_delta))

    def configurations(self) -> List[tuple]:
        """剖析表中所有完整的 <s, b> 配置"""
        return [(s, b) for s in self.splits for b in self.bitwidths if self.has_entry(s, b)]

    def set_unit_timings(self, unit: str, timings: Dict[int, float]):
        self.t_layer_offline[unit] = {int(k): float(v) for k, v in timings.items()}

    # ---- 最低位宽表 ----

    def lowest_bitwidth(self, s: int, allowance_pp: float) -> int:
        """精度损失不超过 allowance_pp 的最小位宽"""
        row = self.acc_delta.get(s)
        if not row:
            raise MissingProfileEntry(f"剖析表缺少切分点 {s}")
        feasible = [b for b, delta in row.items() if delta <= allowance_pp]
        if not feasible:
            raise MissingProfileEntry(f"切分点 {s} 没有满足 {allowance_pp}pp 的位宽")
        return min(feasible)

    def lowest_bitwidth_table(self, allowances: Iterable[float] = (1.0, 2.0, 5.0)) -> Dict[int, Dict[float, int]]:
        return {
            s: {a: self.lowest_bitwidth(s, a) for a in allowances}
            for s in self.splits if s in self.acc_delta
        }

    # ---- 持久化 ----

    def to_dict(self) -> Dict[str, Any]:
        def table(t: Table) -> Dict[str, Dict[str, float]]:
            return {str(s): {str(b): float(v) for b, v in row.items()} for s, row in t.items()}

        return {
            'format': PROFILE_FORMAT,
            'version': PROFILE_VERSION,
            'model_name': self.model_name,
            'N': self.N,
            'splits': list(self.splits),
            'bitwidths': list(self.bitwidths),
            'unit': self.unit,
            'calibration_count': self.calibration_count,
            't_layer_offline': {
                u: {str(i): float(v) for i, v in times.items()} for u, times in self.t_layer_offline.items()
            },
            't_server': {str(i): float(v) for i, v in self.t_server.items()},
            't_pack': table(self.t_pack),
            'd_size': table(self.d_size),
            'acc_delta': table(self.acc_delta),
            'd_response': float(self.d_response),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ProfileDB':
        if data.get('format') != PROFILE_FORMAT:
            raise ConfigError(f"不是剖析文件: format={data.get('format')!r}")
        if data.get('version') != PROFILE_VERSION:
            raise ConfigError(f"不支持的剖析文件版本: {data.get('version')}")

        def table(t: Dict[str, Dict[str, float]]) -> Table:
            return {int(s): {int(b): float(v) for b, v in row.items()} for s, row in t.items()}

        return cls(
            model_name=data['model_name'],
            N=int(data['N']),
            splits=[int(s) for s in data['splits']],
            bitwidths=[int(b) for b in data['bitwidths']],
            unit=data.get('unit', 'cpu'),
            calibration_count=int(data.get('calibration_count', 0)),
            t_layer_offline={
                u: {int(i): float(v) for i, v in times.items()} for u, times in data['t_layer_offline'].items()
            },
            t_server={int(i): float(v) for i, v in data['t_server'].items()},
            t_pack=table(data['t_pack']),
            d_size=table(data['d_size']),
            acc_delta=table(data['acc_delta']),
            d_response=float(data.get('d_response', 0.0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> 'ProfileDB':
        try:
            return cls.from_dict(json.loads(text))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ConfigError(f"剖析文件格式错误: {e}") from e

    def save(self, path: str):
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.to_json(), encoding='utf-8')
        logger.info(f"剖析表已保存到 {path}")

    @classmethod
    def load(cls, path: str) -> 'ProfileDB':
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"剖析文件不存在: {path}")
        return cls.from_json(p.read_text(encoding='utf-8'))
