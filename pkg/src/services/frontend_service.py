import numpy as np

from ..models.caption_item import FeatureMatrix
from ..models.configs import FrontendConfig
from ..models.errors import FrontendInputError, ShapeMismatchError
from .autodiff_service import Tensor, avg_pool_last, conv2d, leaky_relu, no_grad
from .optimizer_service import ParameterStore

KERNEL = 3


class FrontendService:
    """
    CNN10 的桌面级替代：逐频带缩放平移（代替输入端的 bn0），若干卷积块（卷积 -> 逐通道缩放平移 -> LeakyReLU -> 时间平均池化），
    最后在梅尔频带维上做全局平均，通道维作为特征维 D
    """

    def __init__(self, config: FrontendConfig, params: ParameterStore,
                 rng: np.random.Generator, prefix: str = 'frontend'):
        config.validate()
        self.config = config
        self.params = params
        self.prefix = prefix
        dtype = params.dtype
        # 卷积沿频率平移不变，频带位置只能靠逐频带的平移量区分
        params.add(f"{prefix}.input.scale", np.ones(config.mel_bins, dtype=dtype))
        params.add(f"{prefix}.input.shift", (rng.standard_normal(config.mel_bins) * 0.5).astype(dtype))
        c_in = 1
        for i, c_out in enumerate(config.channels):
            std = np.sqrt(2.0 / (c_in * KERNEL * KERNEL))
            params.add(f"{prefix}.block{i}.weight",
                       (rng.standard_normal((c_out, c_in, KERNEL, KERNEL)) * std).astype(dtype))
            params.add(f"{prefix}.block{i}.scale", np.ones(c_out, dtype=dtype))
            params.add(f"{prefix}.block{i}.shift", np.zeros(c_out, dtype=dtype))
            c_in = c_out

    def forward(self, mel: Tensor) -> Tensor:
        """
        Args:
            mel: (B, F_mel, T_frames) 的梅尔谱批次

        Returns:
            (B, ceil(T_frames / prod(pool)), D) 的特征节点序列
        """
        if mel.ndim != 3:
            raise ShapeMismatchError(f"前端输入必须是 (B, F_mel, T_frames)，实际 {mel.shape}")
        b, f, t = mel.shape
        if t < self.config.min_frames:
            raise FrontendInputError(t, self.config.min_frames)
        if f != self.config.mel_bins:
            raise ShapeMismatchError(f"梅尔频带数 {f} 与配置的 {self.config.mel_bins} 不一致")

        x = mel * self.params[f"{self.prefix}.input.scale"].reshape(1, f, 1) \
            + self.params[f"{self.prefix}.input.shift"].reshape(1, f, 1)
        x = x.reshape(b, 1, f, t)
        for i, pool in enumerate(self.config.pool_factors):
            name = f"{self.prefix}.block{i}"
            channels = self.config.channels[i]
            x = conv2d(x, self.params[f"{name}.weight"])
            x = x * self.params[f"{name}.scale"].reshape(1, channels, 1, 1) \
                + self.params[f"{name}.shift"].reshape(1, channels, 1, 1)
            x = leaky_relu(x, self.config.leaky_slope)
            x = avg_pool_last(x, pool)
        # 只在梅尔频带维上做全局平均池化
        x = x.mean(axis=2)
        return x.transpose(0, 2, 1)

    def encode(self, mel: FeatureMatrix) -> FeatureMatrix:
        """单个梅尔谱 (F_mel x T_frames) -> 特征节点 (T x D)"""
        dtype = self.params.dtype
        with no_grad():
            out = self.forward(Tensor(mel.values[None].astype(dtype)))
        return FeatureMatrix(out.data[0])

