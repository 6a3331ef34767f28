"""
各模块的梯度检查用例：float64、小尺寸配置、远离不可导点的随机输入
"""
import logging
from typing import Callable, Dict, Tuple

import numpy as np

from ..models.configs import DecoderConfig, FrontendConfig, GradcheckConfig, GraphAttentionConfig
from ..models.errors import GradientCheckFailure
from ..models.vocabulary import SOS
from ..services.autodiff_service import Tensor, cross_entropy_label_smoothed
from ..services.decoder_service import DecoderService
from ..services.frontend_service import FrontendService
from ..services.gradcheck_service import finite_difference_check
from ..services.graph_attention_service import GraphAttentionService
from ..services.optimizer_service import ParameterStore

logger = logging.getLogger('graphac.gradcheck')

Case = Tuple[Callable[[], Tensor], ParameterStore]


def graph_attention_case(rng: np.random.Generator, t: int = 6, d: int = 4, k: int = 3) -> Case:
    """关系系数 -> softmax -> top-k -> 聚合，输入节点本身也参与检查"""
    params = ParameterStore(np.float64)
    module = GraphAttentionService(GraphAttentionConfig(k=k), d, params, rng)
    x = params.add('x', rng.standard_normal((t, d)))
    readout = rng.standard_normal((t, d))

    def loss_fn() -> Tensor:
        x_hat, _ = module.forward(x)
        return (x_hat * readout).sum()

    return loss_fn, params


def frontend_case(rng: np.random.Generator) -> Case:
    """2 个卷积块、D=8"""
    params = ParameterStore(np.float64)
    module = FrontendService(FrontendConfig(channels=(4, 8), pool_factors=(2, 2), mel_bins=6),
                             params, rng)
    mel = Tensor(rng.standard_normal((1, 6, 8)))
    readout = rng.standard_normal((1, 2, 8))

    def loss_fn() -> Tensor:
        return (module.forward(mel) * readout).sum()

    return loss_fn, params


def decoder_case(rng: np.random.Generator) -> Case:
    """1 层、2 个头、D=8、V=11，带标签平滑的交叉熵"""
    config = DecoderConfig(n_layers=1, n_heads=2, d_model=8, ff_dim=16, max_len=6, vocab_size=11)
    params = ParameterStore(np.float64)
    module = DecoderService(config, params, rng)
    memory = params.add('memory', rng.standard_normal((5, 8)))
    tokens = np.concatenate([[SOS], rng.integers(3, 11, size=4)])
    targets = rng.integers(0, 11, size=5)

    def loss_fn() -> Tensor:
        logits = module.decode_teacher_forced(memory, tokens)
        return cross_entropy_label_smoothed(logits, targets, epsilon=0.1)

    return loss_fn, params


CASES: Dict[str, Callable[[np.random.Generator], Case]] = {
    'graph-attention': graph_attention_case,
    'frontend': frontend_case,
    'decoder': decoder_case,
}


class GradcheckController:
    """对选定模块运行中心差分梯度检查"""

    def run(self, config: GradcheckConfig) -> Dict[str, float]:
        """
        Args:
            config: 模块、步长、阈值和种子

        Returns:
            模块名 -> 最大相对误差
        """
        config.validate()
        names = list(CASES) if config.module == 'all' else [config.module]
        results = {}
        for name in names:
            loss_fn, params = CASES[name](np.random.default_rng(config.seed))
            results[name] = finite_difference_check(loss_fn, params, h=config.step)
            logger.info(f"{name}: {params.num_values} 个坐标, 最大相对误差 {results[name]:.3e}")
        return results

    @staticmethod
    def verify(results: Dict[str, float], tolerance: float) -> None:
        failed = {name: err for name, err in results.items() if not err < tolerance}
        if failed:
            detail = ', '.join(f"{name}={err:.3e}" for name, err in failed.items())
            raise GradientCheckFailure(f"梯度检查未通过 (阈值 {tolerance:g}): {detail}")
