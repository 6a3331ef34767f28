class GraphACError(Exception):
    """项目内所有异常的基类"""


class ValidationError(GraphACError, ValueError):
    """输入、参数或配置不满足前置条件"""


class NonFiniteError(ValidationError):
    """数组中出现 NaN 或 Inf"""


class ShapeMismatchError(ValidationError):
    """张量形状与模块参数不一致"""


class FrontendInputError(ValidationError):
    """梅尔谱帧数少于前端池化所需的最小帧数"""

    def __init__(self, frames: int, minimum: int):
        super().__init__(f"输入帧数 {frames} 过短，前端至少需要 {minimum} 帧")
        self.frames = frames
        self.minimum = minimum


class VocabularyMismatchError(ValidationError):
    """检查点词表与数据不一致"""


class FeatureFileError(GraphACError):
    """FMAT 文件格式错误"""


class BadMagicError(FeatureFileError):
    pass


class TruncatedPayloadError(FeatureFileError):
    pass


class ZeroExtentError(FeatureFileError, ValidationError):
    pass


class MissingGradientError(GraphACError):
    """优化器更新时某个参数没有梯度"""


class DivergenceError(GraphACError):
    """训练损失出现 NaN/Inf"""

    def __init__(self, step: int, loss: float):
        super().__init__(f"训练在第 {step} 步发散 (loss={loss})")
        self.step = step
        self.loss = loss


class NonDeterministicLossError(GraphACError):
    """同一参数下重复计算的损失不一致"""


class GradientCheckFailure(GraphACError):
    """解析梯度与有限差分的相对误差超过阈值"""
