from pathlib import Path
from typing import Union

import cv2
import numpy as np
from PIL import Image

from ..models.errors import ValidationError


def normalize_to_uint8(matrix: np.ndarray) -> np.ndarray:
    """逐矩阵 min-max 归一化到 0..255；常数矩阵输出全 0"""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.size == 0:
        raise ValidationError(f"热力图需要非空二维矩阵，实际形状 {matrix.shape}")
    low, high = matrix.min(), matrix.max()
    if high == low:
        return np.zeros(matrix.shape, dtype=np.uint8)
    scaled = (matrix - low) / (high - low) * 255.0
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def upscale(matrix: np.ndarray, factor: int) -> np.ndarray:
    """
    双线性插值放大 factor 倍

    Args:
        matrix: 二维矩阵
        factor: 放大倍数 (>= 1)

    Returns:
        (rows*factor, cols*factor) 的 float32 矩阵
    """
    if factor < 1:
        raise ValidationError(f"插值倍数必须 >= 1: {factor}")
    matrix = np.asarray(matrix, dtype=np.float32)
    if factor == 1:
        return matrix.copy()
    rows, cols = matrix.shape
    return cv2.resize(matrix, (cols * factor, rows * factor), interpolation=cv2.INTER_LINEAR)


def render_heatmap(matrix: np.ndarray, factor: int = 1) -> np.ndarray:
    """先归一化再放大，结果为 uint8 灰度图"""
    normalized = normalize_to_uint8(matrix).astype(np.float64)
    return np.clip(np.rint(upscale(normalized, factor)), 0, 255).astype(np.uint8)


def save_heatmap(path: Union[str, Path], matrix: np.ndarray, factor: int = 1) -> Path:
    """写出二进制 PGM (P5) 灰度热力图"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(render_heatmap(matrix, factor)).save(path, format='PPM')
    return path
