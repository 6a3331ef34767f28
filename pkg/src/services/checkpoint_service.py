"""
检查点目录:

    manifest.tsv     每行 name<TAB>shape<TAB>file，shape 形如 32x1x3x3
    params/*.fmat    参数值（FMAT，展平成二维存储）
    vocab.txt        词表
    config.env       解析后的完整配置，key=value
"""
import logging
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np
from dotenv import dotenv_values

from ..models.configs import ModelConfig, TrainConfig, configs_from_flat, configs_to_flat
from ..models.errors import FeatureFileError, VocabularyMismatchError
from .captioning_service import CaptioningService
from .feature_service import (read_feature_matrix, read_vocabulary, write_feature_matrix,
                              write_vocabulary)

logger = logging.getLogger('graphac.checkpoint')

MANIFEST = 'manifest.tsv'
CONFIG = 'config.env'
VOCAB = 'vocab.txt'

PathLike = Union[str, Path]


def _as_matrix(value: np.ndarray) -> np.ndarray:
    if value.ndim == 0:
        return value.reshape(1, 1)
    if value.ndim == 1:
        return value.reshape(1, -1)
    return value.reshape(value.shape[0], -1)


def _format_shape(shape: Tuple[int, ...]) -> str:
    return 'x'.join(str(s) for s in shape) if shape else 'scalar'


def _parse_shape(text: str) -> Tuple[int, ...]:
    if text == 'scalar':
        return ()
    return tuple(int(s) for s in text.split('x'))


def write_config_file(path: PathLike, flat: Dict[str, str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.writelines(f"{key}={value}\n" for key, value in flat.items())
    return path


def save_checkpoint(directory: PathLike, model: CaptioningService,
                    train: TrainConfig = None) -> Path:
    """
    保存全部参数、词表和配置

    Args:
        directory: 检查点目录
        model: 模型
        train: 训练配置（一并写入 config.env，便于复现）

    Returns:
        检查点目录
    """
    directory = Path(directory)
    param_dir = directory / 'params'
    param_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, tensor in model.params.items():
        filename = f"params/{name}.fmat"
        write_feature_matrix(directory / filename, _as_matrix(tensor.data))
        lines.append(f"{name}\t{_format_shape(tensor.shape)}\t{filename}\n")
    with open(directory / MANIFEST, 'w', encoding='utf-8', newline='\n') as f:
        f.writelines(lines)
    write_vocabulary(directory / VOCAB, model.vocab)
    write_config_file(directory / CONFIG, configs_to_flat(model.config, train))
    logger.info(f"检查点已保存: {directory} ({len(lines)} 组参数)")
    return directory


def read_manifest(directory: PathLike) -> Dict[str, Tuple[Tuple[int, ...], str]]:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"检查点清单未找到: {path}")
    entries = {}
    for number, line in enumerate(path.read_text(encoding='utf-8').splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split('\t')
        if len(fields) != 3:
            raise FeatureFileError(f"{path}:{number} 需要 3 个字段，实际 {len(fields)}")
        name, shape, filename = fields
        entries[name] = (_parse_shape(shape), filename)
    return entries


def load_checkpoint(directory: PathLike) -> Tuple[CaptioningService, TrainConfig]:
    """
    由检查点目录重建模型

    Returns:
        (模型, 训练配置)
    """
    directory = Path(directory)
    config_path = directory / CONFIG
    if not config_path.exists():
        raise FileNotFoundError(f"检查点配置未找到: {config_path}")
    model_config, train_config = configs_from_flat(dotenv_values(config_path), ModelConfig(), TrainConfig())
    vocab = read_vocabulary(directory / VOCAB)
    if model_config.decoder.vocab_size != len(vocab):
        raise VocabularyMismatchError(
            f"配置中的词表大小 {model_config.decoder.vocab_size} 与 {VOCAB} 的 {len(vocab)} 不一致")

    model = CaptioningService(model_config, vocab)
    state = {}
    for name, (shape, filename) in read_manifest(directory).items():
        values = read_feature_matrix(directory / filename).values
        if values.size != int(np.prod(shape)):
            raise FeatureFileError(f"参数 {name} 的元素数 {values.size} 与清单形状 {shape} 不一致")
        state[name] = values.reshape(shape)
    model.params.load_state_dict(state)
    logger.info(f"检查点已载入: {directory}")
    return model, train_config
