"""
配置管理模块
"""
from .dyno_config import DynoConfig, DEFAULT_CONFIG

__all__ = ['DynoConfig', 'DEFAULT_CONFIG']
