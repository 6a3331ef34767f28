from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import NonFiniteError, ValidationError


@dataclass
class FeatureMatrix:
    """行优先的实数矩阵：梅尔谱 (F_mel x T_frames) 或特征节点 (T x D)"""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValidationError(f"特征矩阵必须是二维的，实际维度 {self.values.ndim}")
        if self.rows < 1 or self.cols < 1:
            raise ValidationError(f"特征矩阵尺寸必须为正: {self.rows}x{self.cols}")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteError("特征矩阵包含 NaN 或 Inf")

    @property
    def rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def cols(self) -> int:
        return int(self.values.shape[1])

    @property
    def shape(self):
        return self.values.shape


@dataclass
class CaptionedClip:
    id: str
    features: FeatureMatrix
    # 每条参考描述为词序列（不含 <sos>/<eos>）
    references: List[List[str]] = field(default_factory=list)

    def __post_init__(self):
        if isinstance(self.features, np.ndarray):
            self.features = FeatureMatrix(self.features)
        if not self.references:
            raise ValidationError(f"片段 {self.id} 至少需要一条参考描述")

    @property
    def mel_bins(self) -> int:
        return self.features.rows

    @property
    def frames(self) -> int:
        return self.features.cols
