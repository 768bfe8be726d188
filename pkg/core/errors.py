"""
错误类型定义
所有模块抛出的异常都继承自 CoViewError，由 main.py 统一捕获并映射为退出码
"""


class CoViewError(Exception):
    """项目异常基类"""

    exit_code = 1


class ConfigError(CoViewError):
    """配置错误（参数非法、配置文件格式错误、缺少前置检查点等）"""

    exit_code = 2


class ParameterError(CoViewError, ValueError):
    """函数参数超出允许范围"""

    exit_code = 2


class ShapeError(CoViewError, ValueError):
    """张量/栅格尺寸不匹配"""


class GenerationError(CoViewError):
    """合成场景生成失败"""


class ViewLookupError(CoViewError, KeyError):
    """未知的视角ID"""

    def __str__(self) -> str:
        return Exception.__str__(self)


class IntegrityError(CoViewError):
    """数据集文件缺失或损坏"""

    exit_code = 3


class EmptyDatasetError(CoViewError):
    """数据集中没有可用样本"""

    exit_code = 3
