"""
GraphAC 模型：卷积前端 -> 图注意力（可关闭）-> Transformer 解码器
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..models.caption_item import CaptionedClip, FeatureMatrix
from ..models.configs import ModelConfig
from ..models.errors import ShapeMismatchError, ValidationError
from ..models.vocabulary import Vocabulary
from .autodiff_service import Tensor, cross_entropy_label_smoothed, no_grad
from .decoder_service import DecoderService, pad_sequences
from .frontend_service import FrontendService
from .graph_attention_service import AdjacencyGraph, GraphAttentionService
from .optimizer_service import ParameterStore

logger = logging.getLogger('graphac.model')


@dataclass
class Batch:
    """一个训练/验证批次：梅尔谱、解码器输入、目标与有效位置掩码"""
    mel: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray

    @property
    def n_tokens(self) -> int:
        return int(self.mask.sum())


def caption_pairs(clips: Sequence[CaptionedClip]) -> List[Tuple[CaptionedClip, List[str]]]:
    """每条参考描述展开为一个训练样本"""
    return [(clip, ref) for clip in clips for ref in clip.references]


class CaptioningService:
    """组合三个模块，管理参数并提供训练损失、解码和邻接图查看"""

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        config.decoder.d_model = config.frontend.d_model
        config.decoder.vocab_size = len(vocab)
        config.validate()
        self.config = config
        self.vocab = vocab
        self.params = ParameterStore(config.precision)

        # 各模块使用独立的随机流，关闭图模块不影响其他模块的初始化
        frontend_seed, graph_seed, decoder_seed = np.random.SeedSequence(config.seed).spawn(3)
        self.frontend = FrontendService(config.frontend, self.params,
                                        np.random.default_rng(frontend_seed))
        self.graph: Optional[GraphAttentionService] = None
        if config.graph.enabled:
            self.graph = GraphAttentionService(config.graph, config.frontend.d_model, self.params,
                                               np.random.default_rng(graph_seed))
        self.decoder = DecoderService(config.decoder, self.params,
                                      np.random.default_rng(decoder_seed))
        logger.debug(f"模型参数: {len(self.params)} 组, {self.params.num_values} 个数值, "
                     f"图模块{'开启' if self.graph else '关闭'}")

    @property
    def dtype(self):
        return self.params.dtype

    def encode(self, mel: Tensor) -> Tuple[Tensor, Optional[AdjacencyGraph]]:
        """
        梅尔谱批次 (B, F_mel, T_frames) -> (X̂, Â)

        图模块关闭时 X̂ 就是前端输出 X，Â 为 None
        """
        x = self.frontend.forward(mel)
        if self.graph is None:
            return x, None
        return self.graph.forward(x)

    def make_batch(self, pairs: Sequence[Tuple[CaptionedClip, List[str]]]) -> Batch:
        """
        组装批次；描述超过 max_len 时截断（截断后的样本没有 <eos> 目标）
        """
        if not pairs:
            raise ValidationError("批次为空")
        shapes = {clip.features.shape for clip, _ in pairs}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"同一批次的梅尔谱形状必须一致: {sorted(shapes)}")
        max_len = self.config.decoder.max_len
        sequences = [self.vocab.encode(words)[:max_len + 1] for _, words in pairs]
        padded = pad_sequences(sequences)
        inputs = padded[:, :-1]
        targets = padded[:, 1:]
        mask = np.zeros(targets.shape, dtype=bool)
        for i, seq in enumerate(sequences):
            mask[i, :len(seq) - 1] = True
        mel = np.stack([clip.features.values for clip, _ in pairs]).astype(self.dtype)
        return Batch(mel=mel, inputs=inputs, targets=targets, mask=mask)

    def logits(self, batch: Batch) -> Tensor:
        x_hat, _ = self.encode(Tensor(batch.mel))
        return self.decoder.decode_teacher_forced(x_hat, batch.inputs)

    def loss(self, batch: Batch, epsilon: Optional[float] = None) -> Tuple[Tensor, float]:
        """
        带标签平滑的交叉熵以及教师强制下的逐词准确率

        Args:
            batch: 批次
            epsilon: 平滑系数，默认取配置值

        Returns:
            (标量损失, 准确率)
        """
        eps = self.config.label_smoothing if epsilon is None else epsilon
        logits = self.logits(batch)
        loss = cross_entropy_label_smoothed(logits, batch.targets, eps, batch.mask)
        predicted = logits.data.argmax(axis=-1)
        correct = int(((predicted == batch.targets) & batch.mask).sum())
        return loss, correct / max(1, batch.n_tokens)

    def evaluate_loss(self, batches: Sequence[Batch]) -> Tuple[float, float]:
        """按词数加权的平均损失和准确率（不记录计算图）"""
        if not batches:
            return float('nan'), float('nan')
        total_loss, total_correct, total_tokens = 0.0, 0.0, 0
        with no_grad():
            for batch in batches:
                loss, accuracy = self.loss(batch)
                total_loss += float(loss.data) * batch.n_tokens
                total_correct += accuracy * batch.n_tokens
                total_tokens += batch.n_tokens
        return total_loss / max(1, total_tokens), total_correct / max(1, total_tokens)

    def encode_clip(self, mel: FeatureMatrix) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """单个片段 -> (X̂ (T, D), Â (T, T) 或 None)"""
        with no_grad():
            x_hat, adj = self.encode(Tensor(mel.values[None].astype(self.dtype)))
        return x_hat.data[0], (adj.numpy()[0] if adj is not None else None)

    def caption(self, mel: FeatureMatrix, beam_size: int = 5, length_norm: bool = True) -> List[str]:
        """束搜索生成描述词序列"""
        x_hat, _ = self.encode_clip(mel)
        tokens = self.decoder.beam_search(x_hat, beam_size=beam_size, length_norm=length_norm)
        return self.vocab.decode(tokens)

    def adjacency(self, mel: FeatureMatrix) -> np.ndarray:
        if self.graph is None:
            raise ValidationError("模型未启用图注意力模块，没有邻接图可导出")
        return self.encode_clip(mel)[1]
