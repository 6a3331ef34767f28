import logging
import time
from typing import List, Sequence, Tuple

import numpy as np

from ..models.caption_item import CaptionedClip
from ..models.configs import ModelConfig, TrainConfig
from ..models.errors import DivergenceError, NonFiniteError, ValidationError
from ..models.reports import EpochRecord, TrainReport
from ..models.vocabulary import Vocabulary
from ..services.captioning_service import Batch, CaptioningService, caption_pairs
from ..services.checkpoint_service import save_checkpoint
from ..services.optimizer_service import AdamState, adam_step
from ..services.path_service import PathService
from ..services.synthetic_service import split_dataset

logger = logging.getLogger('graphac.train')


def make_batches(model: CaptioningService, clips: Sequence[CaptionedClip], batch_size: int) -> List[Batch]:
    pairs = caption_pairs(clips)
    return [model.make_batch(pairs[i:i + batch_size]) for i in range(0, len(pairs), batch_size)]


class TrainingController:
    """训练控制器：教师强制 + 标签平滑交叉熵 + Adam"""

    def __init__(self, path_service: PathService):
        self.path_service = path_service

    def train(self, model_config: ModelConfig, train_config: TrainConfig,
              clips: Sequence[CaptionedClip]) -> Tuple[TrainReport, CaptioningService]:
        """
        按固定种子切分训练/验证集后训练，保存检查点和训练记录

        Args:
            model_config: 模型配置
            train_config: 训练配置
            clips: 全部片段

        Returns:
            (训练记录, 训练后的模型)
        """
        train_config.validate()
        train_set, val_set = split_dataset(list(clips), train_config.val_ratio, model_config.seed)
        logger.info(f"训练集 {len(train_set)} 个片段, 验证集 {len(val_set)} 个片段")
        report, model = self.fit(model_config, train_config, train_set, val_set)

        checkpoint = save_checkpoint(self.path_service.checkpoint_directory, model, train_config)
        report.checkpoint_path = str(checkpoint)
        with open(self.path_service.train_report_file, 'w', encoding='utf-8', newline='\n') as f:
            f.writelines(f"{line}\n" for line in report.to_lines())
        return report, model

    def fit(self, model_config: ModelConfig, train_config: TrainConfig,
            train_set: Sequence[CaptionedClip],
            val_set: Sequence[CaptionedClip] = ()) -> Tuple[TrainReport, CaptioningService]:
        """
        在给定的训练集上训练，不写任何文件

        词表由训练集的参考描述构建；批次顺序只由 model_config.seed 决定
        """
        if not train_set:
            raise ValidationError("训练集为空")
        train_config.validate()
        vocab = Vocabulary.build(ref for clip in train_set for ref in clip.references)
        model_config.frontend.mel_bins = train_set[0].mel_bins
        model = CaptioningService(model_config, vocab)
        state = AdamState(lr=train_config.lr, beta1=train_config.beta1,
                          beta2=train_config.beta2, epsilon=train_config.adam_eps)

        pairs = caption_pairs(train_set)
        val_batches = make_batches(model, val_set, train_config.batch_size)
        rng = np.random.default_rng(model_config.seed)
        report = TrainReport()
        started = time.perf_counter()
        step = 0
        for epoch in range(1, train_config.epochs + 1):
            epoch_start = time.perf_counter()
            order = rng.permutation(len(pairs))
            loss_sum, correct_sum, token_sum = 0.0, 0.0, 0
            for i in range(0, len(pairs), train_config.batch_size):
                batch = model.make_batch([pairs[j] for j in order[i:i + train_config.batch_size]])
                step += 1
                try:
                    loss, accuracy = model.loss(batch)
                except NonFiniteError:
                    raise DivergenceError(step, float('nan'))
                value = float(loss.data)
                if not np.isfinite(value):
                    raise DivergenceError(step, value)
                loss.backward()
                adam_step(model.params, state)
                loss_sum += value * batch.n_tokens
                correct_sum += accuracy * batch.n_tokens
                token_sum += batch.n_tokens

            val_loss, val_accuracy = model.evaluate_loss(val_batches)
            record = EpochRecord(epoch=epoch,
                                 train_loss=loss_sum / token_sum,
                                 train_accuracy=correct_sum / token_sum,
                                 val_loss=val_loss,
                                 val_accuracy=val_accuracy,
                                 seconds=time.perf_counter() - epoch_start)
            report.add(record)
            logger.info(f"epoch {epoch}/{train_config.epochs}: "
                        f"train loss={record.train_loss:.4f} acc={record.train_accuracy:.3f}, "
                        f"val loss={val_loss:.4f} acc={val_accuracy:.3f} ({record.seconds:.1f}s)")
        report.wall_clock = time.perf_counter() - started
        return report, model
