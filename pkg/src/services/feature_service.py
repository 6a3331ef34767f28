"""
特征矩阵 (FMAT)、描述文件 (TSV) 与词表文件的读写

FMAT: b"FMAT" + uint32 版本号(=1) + uint32 行数 + uint32 列数，全部小端；
随后是 行数*列数 个小端 float32，行优先。
"""
import logging
import struct
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from ..models.caption_item import CaptionedClip, FeatureMatrix
from ..models.errors import (BadMagicError, FeatureFileError, NonFiniteError,
                             TruncatedPayloadError, ValidationError, ZeroExtentError)
from ..models.vocabulary import Vocabulary

logger = logging.getLogger('graphac.features')

MAGIC = b'FMAT'
VERSION = 1
_HEADER = struct.Struct('<4sIII')
_STORAGE_DTYPE = np.dtype('<f4')

PathLike = Union[str, Path]


def write_feature_matrix(path: PathLike, m: Union[FeatureMatrix, np.ndarray]) -> Path:
    """
    以 FMAT 格式写出二维矩阵（float32 存储）

    Args:
        path: 输出文件路径
        m: 特征矩阵或二维数组

    Returns:
        写出的文件路径
    """
    values = m.values if isinstance(m, FeatureMatrix) else np.asarray(m)
    if values.ndim != 2:
        raise ValidationError(f"FMAT 只能存储二维矩阵，实际形状 {values.shape}")
    rows, cols = values.shape
    if rows == 0 or cols == 0:
        raise ZeroExtentError(f"zero extent: {rows}x{cols}")
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"拒绝写出包含 NaN/Inf 的矩阵: {path}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(values, dtype=_STORAGE_DTYPE).tobytes()
    with open(path, 'wb') as f:
        f.write(_HEADER.pack(MAGIC, VERSION, rows, cols))
        f.write(payload)
    return path


def read_feature_matrix(path: PathLike) -> FeatureMatrix:
    """
    读取 FMAT 文件

    Args:
        path: 文件路径

    Returns:
        float32 精度的特征矩阵
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"特征文件未找到: {path}")
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"bad magic: {path}")
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"truncated header: {path}")
    _, version, rows, cols = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise FeatureFileError(f"不支持的 FMAT 版本 {version}: {path}")
    if rows == 0 or cols == 0:
        raise ZeroExtentError(f"zero extent: {rows}x{cols} in {path}")
    expected = _HEADER.size + rows * cols * _STORAGE_DTYPE.itemsize
    if len(raw) < expected:
        raise TruncatedPayloadError(f"truncated payload: 需要 {expected} 字节，实际 {len(raw)}: {path}")
    if len(raw) > expected:
        raise FeatureFileError(f"文件尾部有 {len(raw) - expected} 字节多余数据: {path}")
    values = np.frombuffer(raw, dtype=_STORAGE_DTYPE, offset=_HEADER.size).reshape(rows, cols)
    return FeatureMatrix(values.astype(np.float32))


def write_captions(path: PathLike, captions: Dict[str, List[List[str]]]) -> Path:
    """每行一条参考描述: id<TAB>caption，同一 id 可有多行"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for clip_id, references in captions.items():
        if '\t' in clip_id or '\n' in clip_id:
            raise ValidationError(f"片段 id 含有非法字符: {clip_id!r}")
        for words in references:
            lines.append(f"{clip_id}\t{' '.join(words)}\n")
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.writelines(lines)
    return path


def read_captions(path: PathLike) -> Dict[str, List[List[str]]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"描述文件未找到: {path}")
    captions: Dict[str, List[List[str]]] = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip('\n')
            if not line.strip():
                continue
            if '\t' not in line:
                raise ValidationError(f"{path}:{line_no} 缺少制表符分隔")
            clip_id, text = line.split('\t', 1)
            captions.setdefault(clip_id, []).append(text.split())
    return captions


def write_vocabulary(path: PathLike, vocab: Vocabulary) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.writelines(f"{t}\n" for t in vocab.tokens)
    return path


def read_vocabulary(path: PathLike) -> Vocabulary:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"词表文件未找到: {path}")
    tokens = [line for line in path.read_text(encoding='utf-8').splitlines() if line.strip()]
    vocab = Vocabulary(tokens[4:])
    if tokens[:4] != vocab.tokens[:4]:
        raise ValidationError(f"词表文件保留符号错误: {path}")
    return vocab


def write_dataset(directory: PathLike, clips: List[CaptionedClip]) -> Path:
    """
    写出数据集目录: captions.tsv + features/<id>.fmat

    Args:
        directory: 数据集目录
        clips: 片段列表

    Returns:
        数据集目录
    """
    directory = Path(directory)
    feature_dir = directory / 'features'
    feature_dir.mkdir(parents=True, exist_ok=True)
    for clip in clips:
        write_feature_matrix(feature_dir / f"{clip.id}.fmat", clip.features)
    write_captions(directory / 'captions.tsv', {clip.id: clip.references for clip in clips})
    logger.info(f"已写出数据集: {directory} ({len(clips)} 个片段)")
    return directory


def read_dataset(directory: PathLike) -> List[CaptionedClip]:
    directory = Path(directory)
    captions = read_captions(directory / 'captions.tsv')
    clips = []
    for clip_id, references in captions.items():
        features = read_feature_matrix(directory / 'features' / f"{clip_id}.fmat")
        clips.append(CaptionedClip(id=clip_id, features=features, references=references))
    logger.info(f"已读取数据集: {directory} ({len(clips)} 个片段)")
    return clips
