from typing import Callable, Iterable, List

import numpy as np

from ..models.errors import ValidationError
from ..models.reports import Hypothesis

# 输入: (H, L) 的前缀批次（以 <sos> 开头）；输出: (H, V) 的下一个词对数概率
StepFunction = Callable[[np.ndarray], np.ndarray]


def _rank_key(length_norm: bool):
    # 分数相同按词序列排序，保证确定性
    return lambda h: (-h.score(length_norm), h.tokens)


def beam_search(step_fn: StepFunction, beam_size: int, max_len: int,
                sos: int, eos: int, banned: Iterable[int] = (),
                length_norm: bool = True) -> Hypothesis:
    """
    束搜索：每步扩展所有存活候选，在全部扩展结果中保留得分最高的 beam_size 个，
    已结束（生成 <eos> 或达到 max_len）的候选移入完成池

    Args:
        step_fn: 前缀 -> 下一个词对数概率
        beam_size: 束宽 (>= 1)
        max_len: 最大生成长度（不含 <sos>）
        sos: 起始符索引
        eos: 结束符索引
        banned: 不允许生成的词索引
        length_norm: 是否用 对数概率/词数 排序

    Returns:
        得分最高的完成候选
    """
    if beam_size < 1:
        raise ValidationError(f"beam_size 必须 >= 1: {beam_size}")
    if max_len < 1:
        raise ValidationError(f"max_len 必须 >= 1: {max_len}")
    banned = sorted(set(banned))
    key = _rank_key(length_norm)

    live: List[Hypothesis] = [Hypothesis(tokens=())]
    finished: List[Hypothesis] = []
    for _ in range(max_len):
        prefixes = np.array([(sos,) + h.tokens for h in live], dtype=np.int64)
        log_probs = np.array(step_fn(prefixes), dtype=np.float64)
        if banned:
            log_probs[:, banned] = -np.inf

        candidates = []
        for hyp, row in zip(live, log_probs):
            for token in np.flatnonzero(np.isfinite(row)):
                tokens = hyp.tokens + (int(token),)
                done = int(token) == eos or len(tokens) == max_len
                candidates.append(Hypothesis(tokens=tokens,
                                             log_prob=hyp.log_prob + float(row[token]),
                                             finished=done))
        candidates.sort(key=key)

        live = []
        for cand in candidates[:beam_size]:
            (finished if cand.finished else live).append(cand)
        if not live:
            break

    if not finished:
        raise ValidationError("束搜索没有得到任何完成的候选")
    return min(finished, key=key)


def greedy_search(step_fn: StepFunction, max_len: int, sos: int, eos: int,
                  banned: Iterable[int] = ()) -> Hypothesis:
    """贪心解码，每步取概率最大的词（并列时取索引较小者）"""
    banned = sorted(set(banned))
    tokens, log_prob = (), 0.0
    for _ in range(max_len):
        row = np.array(step_fn(np.array([(sos,) + tokens], dtype=np.int64))[0], dtype=np.float64)
        if banned:
            row[banned] = -np.inf
        token = int(np.argmax(row))
        tokens += (token,)
        log_prob += float(row[token])
        if token == eos:
            break
    return Hypothesis(tokens=tokens, log_prob=log_prob, finished=True)
