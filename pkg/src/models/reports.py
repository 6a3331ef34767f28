from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .errors import ValidationError


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    seconds: float = 0.0


@dataclass
class TrainReport:
    """训练过程记录，epoch 从 1 开始连续编号"""
    epochs: List[EpochRecord] = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoint_path: Optional[str] = None

    def add(self, record: EpochRecord) -> None:
        expected = len(self.epochs) + 1
        if record.epoch != expected:
            raise ValidationError(f"epoch 编号不连续: 期望 {expected}，实际 {record.epoch}")
        self.epochs.append(record)

    @property
    def train_losses(self) -> List[float]:
        return [r.train_loss for r in self.epochs]

    @property
    def val_losses(self) -> List[float]:
        return [r.val_loss for r in self.epochs]

    def to_lines(self) -> List[str]:
        """行式记录: epoch<TAB>split<TAB>loss<TAB>accuracy"""
        lines = []
        for r in self.epochs:
            lines.append(f"{r.epoch}\ttrain\t{r.train_loss!r}\t{r.train_accuracy!r}")
            lines.append(f"{r.epoch}\tval\t{r.val_loss!r}\t{r.val_accuracy!r}")
        return lines


@dataclass
class Hypothesis:
    """束搜索中的一条候选"""
    tokens: Tuple[int, ...]
    log_prob: float = 0.0
    finished: bool = False

    def score(self, length_norm: bool = True) -> float:
        if not length_norm:
            return self.log_prob
        return self.log_prob / max(1, len(self.tokens))


@dataclass
class ClipScore:
    id: str
    candidate: List[str]
    references: List[List[str]]
    scores: Dict[str, float] = field(default_factory=dict)


@dataclass
class MetricReport:
    bleu: List[float]
    rouge_l: float
    cider: float
    spider_partial: float
    per_clip: List[ClipScore] = field(default_factory=list)
    # SPICE 未实现，SPIDEr 永远只是部分值
    spider_is_partial: bool = True
    beam_size: Optional[int] = None
    extras: Dict[str, float] = field(default_factory=dict)

    def corpus_scores(self) -> Dict[str, float]:
        scores = {f'BLEU_{n}': s for n, s in enumerate(self.bleu, start=1)}
        scores['ROUGE_l'] = self.rouge_l
        scores['CIDEr'] = self.cider
        scores['SPIDEr_partial'] = self.spider_partial
        scores.update(self.extras)
        return scores

    def to_lines(self) -> List[str]:
        lines = [f"{name}\t{value!r}" for name, value in self.corpus_scores().items()]
        if self.beam_size is not None:
            lines.append(f"beam_size\t{self.beam_size}")
        lines.append(f"spider_partial\t{'true' if self.spider_is_partial else 'false'}")
        return lines

    def to_table(self) -> str:
        """人类可读的指标表"""
        rows = [f"{'metric':<24}{'score':>10}", '-' * 34]
        for name, value in self.corpus_scores().items():
            label = f"{name} (partial)" if name == 'SPIDEr_partial' else name
            rows.append(f"{label:<24}{value:>10.4f}")
        return '\n'.join(rows)
