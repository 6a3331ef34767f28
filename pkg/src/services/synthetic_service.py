import logging
from typing import List, Tuple

import numpy as np

from ..models.caption_item import CaptionedClip
from ..models.configs import SyntheticSpec

logger = logging.getLogger('graphac.synthetic')

EVENT_WORDS = (
    'dog', 'bell', 'rain', 'car', 'bird', 'siren', 'door', 'engine',
    'water', 'wind', 'clock', 'horn', 'baby', 'cat', 'train', 'thunder',
    'footsteps', 'applause', 'phone', 'knock', 'music', 'speech', 'glass', 'drill',
)


def event_word(event_type: int) -> str:
    if event_type < len(EVENT_WORDS):
        return EVENT_WORDS[event_type]
    return f"event{event_type:02d}"


def event_band(event_type: int, spec: SyntheticSpec) -> Tuple[int, int]:
    """事件类型对应的固定梅尔频带 [low, high)"""
    low = event_type * spec.mel_bins // spec.n_event_types
    high = (event_type + 1) * spec.mel_bins // spec.n_event_types
    return low, high


class _EventDeck:
    """洗牌后的事件类型牌堆，抽完再洗，使各类型出现次数保持均衡"""

    def __init__(self, n_types: int, rng: np.random.Generator):
        self.n_types = n_types
        self.rng = rng
        self.cards: List[int] = []

    def draw(self, k: int) -> List[int]:
        chosen, skipped = [], []
        while len(chosen) < k:
            if not self.cards:
                self.cards.extend(int(t) for t in self.rng.permutation(self.n_types))
            card = self.cards.pop()
            if card in chosen:
                skipped.append(card)
            else:
                chosen.append(card)
        self.cards.extend(reversed(skipped))
        return chosen


def generate_synthetic_dataset(spec: SyntheticSpec) -> List[CaptionedClip]:
    """
    生成合成事件描述数据集，结果只由生成参数（含随机种子）决定

    每个事件是固定频带内、随机起止时刻的矩形能量块，叠加在高斯背景噪声上；
    参考描述按起始时刻列出事件词，起始相同时按事件类型编号排序。

    Args:
        spec: 生成参数

    Returns:
        片段列表，id 为 clip0000, clip0001, ...
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    deck = _EventDeck(spec.n_event_types, rng)
    min_duration = max(1, spec.frames // 16)
    max_duration = max(min_duration, spec.frames // 4)

    clips = []
    for i in range(spec.n_clips):
        n_events = int(rng.integers(spec.min_events, spec.max_events + 1))
        event_types = deck.draw(n_events)

        if spec.noise_std > 0:
            mel = rng.normal(0.0, spec.noise_std, size=(spec.mel_bins, spec.frames))
        else:
            mel = np.zeros((spec.mel_bins, spec.frames))

        events = []
        for event_type in event_types:
            duration = int(rng.integers(min_duration, max_duration + 1))
            onset = int(rng.integers(0, spec.frames - duration + 1))
            low, high = event_band(event_type, spec)
            mel[low:high, onset:onset + duration] += spec.event_amplitude
            events.append((onset, event_type))

        events.sort()
        caption = [event_word(t) for _, t in events]
        clips.append(CaptionedClip(id=f"clip{i:04d}",
                                   features=mel.astype(np.float32),
                                   references=[caption]))

    logger.info(f"已生成合成数据集: {spec.n_clips} 个片段, {spec.n_event_types} 种事件, 种子 {spec.seed}")
    return clips


def split_dataset(clips: List[CaptionedClip], val_ratio: float, seed: int):
    """
    按固定种子打乱后切分训练/验证集

    Returns:
        (训练集, 验证集)，两者都按原始顺序排列
    """
    n_val = int(round(len(clips) * val_ratio))
    if val_ratio > 0 and len(clips) > 1:
        n_val = min(max(1, n_val), len(clips) - 1)
    order = np.random.default_rng(seed).permutation(len(clips))
    val_index = set(int(i) for i in order[:n_val])
    train = [c for i, c in enumerate(clips) if i not in val_index]
    val = [c for i, c in enumerate(clips) if i in val_index]
    return train, val
