"""
配置管理模块
处理模型、打包、剖析、调度与运行时的配置选项
"""
import copy
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from ..errors import ConfigError


DEFAULT_CONFIG: Dict[str, Any] = {
    'model': {
        'path': './models/reference.model',
        'weights': './models/reference.weights',
        'seed': 0,
    },
    'ispm': {
        'codec': 'lz4',
        # 32 表示 PASSTHROUGH（不量化）
        'bitwidths': [2, 3, 4, 5, 6, 8, 10, 12, 16, 32],
    },
    'profiler': {
        'unit': 'cpu',
        'server_unit': None,           # None 表示使用 unit 的测量值
        'server_speedup': 1.0,         # 服务端相对客户端的加速比
        'relu_only': False,
        'calibration_count': 16,
        'alpha_rt': 0.5,
        'alpha_hist': 0.05,
        'freshness_s': 300.0,
        'profile_file': './output/profile.json',
    },
    'network': {
        'type': 'wifi',
        # 名义链路参数（带宽单位 bytes/s，时延单位 ms，单向）
        'links': {
            'ethernet': {'bandwidth': 125_000_000.0, 'latency': 0.5},
            'wifi': {'bandwidth': 50_000_000.0, 'latency': 2.0},
            '4g': {'bandwidth': 2_500_000.0, 'latency': 50.0},
            '3g': {'bandwidth': 250_000.0, 'latency': 100.0},
        },
        # 历史滑动平均的初始值；为空则该网络类型没有历史估计
        'history': {
            'ethernet': {'latency': 0.5, 'bandwidth': 125_000_000.0},
            'wifi': {'latency': 2.0, 'bandwidth': 50_000_000.0},
            '4g': {'latency': 50.0, 'bandwidth': 2_500_000.0},
            '3g': {'latency': 100.0, 'bandwidth': 250_000.0},
        },
        'jitter_seed': None,
        'jitter_ms': 0.0,
    },
    'scheduler': {
        'reschedule_threshold': 0.05,
        'pipelined': False,
        'hard': ['accuracy<=1pp'],
        'soft': ['min:server_cost', 'min:latency'],
    },
    'runtime': {
        'host': '127.0.0.1',
        'port': 7301,
        'queue_capacity': 2,
        'deadline_factor': 2.0,
        'connect_timeout_s': 10.0,
        'request_timeout_s': 60.0,
        'batch_size': 16,
    },
    'sweep': {
        'output': './output/sweep.csv',
        'requests_per_point': 20,
    },
    'logging': {
        'level': 'INFO',
        'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        'file': None,
        'to_file': True,
    },
}


class DynoConfig:
    """框架配置类"""

    def __init__(self, config_file: Optional[str] = None):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.default_config = DEFAULT_CONFIG
        self.config = copy.deepcopy(DEFAULT_CONFIG)

        if config_file:
            self.load_config(config_file)

    def load_config(self, config_file: str):
        """从文件加载配置"""
        config_path = Path(config_file)
        if not config_path.exists():
            self.logger.warning(f"配置文件不存在: {config_file}，使用默认配置")
            return

        try:
            with open(config_path, 'r', encoding='utf-8') as f:
                if config_path.suffix.lower() in ['.yaml', '.yml']:
                    loaded_config = yaml.safe_load(f) or {}
                elif config_path.suffix.lower() == '.json':
                    loaded_config = json.load(f)
                else:
                    raise ConfigError(f"不支持的配置文件格式: {config_path.suffix}")
        except (yaml.YAMLError, json.JSONDecodeError) as e:
            raise ConfigError(f"加载配置文件失败 {config_file}: {e}") from e

        # 递归更新配置
        self._deep_update(self.config, loaded_config)
        self.logger.info(f"配置已从 {config_file} 加载")

    def save_config(self, config_file: str):
        """保存配置到文件"""
        config_path = Path(config_file)
        config_path.parent.mkdir(parents=True, exist_ok=True)

        with open(config_path, 'w', encoding='utf-8') as f:
            if config_path.suffix.lower() in ['.yaml', '.yml']:
                yaml.dump(self.config, f, default_flow_style=False, allow_unicode=True)
            elif config_path.suffix.lower() == '.json':
                json.dump(self.config, f, ensure_ascii=False, indent=2)
            else:
                raise ConfigError(f"不支持的配置文件格式: {config_path.suffix}")

        self.logger.info(f"配置已保存到 {config_file}")

    def _deep_update(self, target: Dict[str, Any], source: Dict[str, Any]):
        """深度更新字典"""
        for key, value in source.items():
            if key in target and isinstance(target[key], dict) and isinstance(value, dict):
                self._deep_update(target[key], value)
            else:
                target[key] = value

    def get(self, key_path: str, default=None):
        """获取配置值，支持点号分隔的路径"""
        keys = key_path.split('.')
        value = self.config

        try:
            for key in keys:
                value = value[key]
            return value
        except (KeyError, TypeError):
            return default

    def set(self, key_path: str, value: Any):
        """设置配置值，支持点号分隔的路径"""
        keys = key_path.split('.')
        target = self.config

        for key in keys[:-1]:
            if key not in target:
                target[key] = {}
            target = target[key]

        target[keys[-1]] = value

    def link_models(self) -> Dict[str, Any]:
        """返回校验后的链路模型 {name: LinkModel}"""
        from ..runtime.link import LinkModel

        links = {}
        for name, spec in (self.get('network.links') or {}).items():
            try:
                links[name] = LinkModel(name=name, **spec)
            except Exception as e:
                raise ConfigError(f"链路 {name} 配置无效: {e}") from e
        return links

    def validate_config(self) -> List[str]:
        """验证配置的有效性"""
        from ..scheduler.constraints import parse_hard_constraint, parse_soft_target

        errors = []

        bitwidths = self.get('ispm.bitwidths', [])
        if not bitwidths:
            errors.append("未指定位宽列表 ispm.bitwidths")
        for b in bitwidths:
            if not isinstance(b, int) or not (1 <= b <= 16 or b == 32):
                errors.append(f"无效位宽: {b}（允许 1-16 或 32=PASSTHROUGH）")

        codec = self.get('ispm.codec', 'lz4')
        if codec not in ('lz4', 'none'):
            errors.append(f"不支持的编解码器: {codec}")

        for key in ('profiler.alpha_rt', 'profiler.alpha_hist'):
            alpha = self.get(key)
            if not isinstance(alpha, (int, float)) or not 0.0 < alpha <= 1.0:
                errors.append(f"{key} 必须位于 (0, 1]: {alpha}")

        if self.get('profiler.freshness_s', 0) <= 0:
            errors.append("profiler.freshness_s 必须大于 0")

        try:
            links = self.link_models()
            net_type = self.get('network.type')
            if net_type not in links:
                errors.append(f"未知网络类型: {net_type}，可选: {sorted(links)}")
        except ConfigError as e:
            errors.append(str(e))

        for expr in self.get('scheduler.hard', []) or []:
            try:
                parse_hard_constraint(expr)
            except ConfigError as e:
                errors.append(str(e))
        for expr in self.get('scheduler.soft', []) or []:
            try:
                parse_soft_target(expr)
            except ConfigError as e:
                errors.append(str(e))

        if self.get('runtime.queue_capacity', 0) < 1:
            errors.append("runtime.queue_capacity 必须至少为 1")

        return errors

    def setup_logging(self, config_path: str = "config/config.yaml", to_file: bool = True):
        """根据配置设置日志，当前配置中的级别优先于文件中的级别"""
        from ..logging_setup import init_logging

        init_logging(
            app_name="dyno",
            config_path=config_path,
            level_override=self.get('logging.level'),
            to_file=to_file and self.get('logging.to_file', True),
        )

    def create_default_config_file(self, file_path: str):
        """创建默认配置文件"""
        self.save_config(file_path)
        self.logger.info(f"默认配置文件已创建: {file_path}")

    def __str__(self):
        return json.dumps(self.config, indent=2, ensure_ascii=False)
