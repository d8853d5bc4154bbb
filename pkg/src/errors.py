"""
异常定义
各模块抛出的具名异常，CLI 与服务端连接循环负责捕获并转换
"""


class DynoError(Exception):
    """所有框架异常的基类"""


# ---- graph ----

class ModelFormatError(DynoError, ValueError):
    """模型文件或权重文件格式错误"""


class CycleError(ModelFormatError):
    """依赖存在环，或引用了尚未声明的节点"""


class UnknownOperator(ModelFormatError):
    """不支持的算子类型"""


class RangeError(DynoError, ValueError):
    """切分点超出 [0, N]"""


# ---- engine ----

class MissingDependency(DynoError):
    """执行区间内所需张量既未产生也未注入"""


class ShapeError(DynoError, ValueError):
    """算子输入形状不匹配"""


# ---- ispm ----

class NonFiniteInput(DynoError, ValueError):
    """张量包含 NaN 或 Inf"""


class HeaderMismatch(DynoError, ValueError):
    """量化头与数据长度不一致"""


class ValueOverflow(DynoError, ValueError):
    """量化值超出位宽"""


class CorruptPayload(DynoError, ValueError):
    """压缩数据或容器损坏"""


# ---- profiler ----

class ZeroOfflineTime(DynoError, ValueError):
    """离线前缀耗时为 0，无法计算缩放因子"""


class NoEstimate(DynoError):
    """既无实时估计也无同类型网络的历史估计"""


# ---- scheduler ----

class MissingProfileEntry(DynoError, KeyError):
    """剖析表中缺少 <s, c> 配置"""


class EmptySpace(DynoError, ValueError):
    """候选配置空间为空"""


class ConfigError(DynoError, ValueError):
    """配置或约束表达式无效"""


# ---- runtime ----

class NetworkError(DynoError):
    """连接失败、超时或连接被对端关闭"""


class ServerError(DynoError):
    """服务端返回的错误"""


class VersionMismatch(DynoError):
    """协议版本或权重摘要不一致"""


class MalformedMessage(DynoError, ValueError):
    """无法解析或不满足依赖约束的消息"""
