import logging
from pathlib import Path
from typing import Dict, Iterable, Optional, Union

from dotenv import dotenv_values

from ..models.configs import normalize_key
from ..models.errors import ValidationError

logger = logging.getLogger('graphac.config')


def read_config_file(path: Union[str, Path], allowed: Iterable[str]) -> Dict[str, str]:
    """
    读取 key=value 配置文件

    Args:
        path: 配置文件路径
        allowed: 当前子命令接受的键（已规范化）

    Returns:
        规范化键 -> 字符串值
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"--config 指定的文件不存在: {path}")
    allowed = set(allowed)
    values = {}
    for raw_key, raw_value in dotenv_values(path).items():
        key = normalize_key(raw_key)
        if key not in allowed:
            raise ValidationError(f"{path}: 未知配置项 {raw_key}")
        if raw_value is None:
            raise ValidationError(f"{path}: 配置项 {raw_key} 缺少值")
        values[key] = raw_value.strip()
    logger.debug(f"已读取配置文件 {path}: {sorted(values)}")
    return values


def merge_values(defaults: Dict[str, str], file_values: Dict[str, str],
                 overrides: Dict[str, Optional[str]]) -> Dict[str, str]:
    """默认值 < 配置文件 < 命令行参数；值为 None 的命令行参数视为未给出"""
    merged = dict(defaults)
    merged.update(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def format_config(values: Dict[str, str]) -> str:
    width = max((len(k) for k in values), default=0)
    return '\n'.join(f"{key:<{width}} = {value}" for key, value in values.items())
