"""
描述评价指标：BLEU_n、ROUGE_l、CIDEr-D

METEOR 与 SPICE 依赖外部同义词资源和语义解析器，未实现；
SPIDEr 因此只能给出基于 CIDEr 的部分值，并始终带 partial 标记。
"""
import math
from collections import Counter
from typing import Dict, List, Sequence, Tuple

from ..models.errors import ValidationError
from ..models.reports import ClipScore, MetricReport

Tokens = Sequence[str]

ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0


def ngram_counts(tokens: Tokens, max_n: int) -> Counter:
    """统计 1..max_n 阶的所有 n-gram"""
    counts = Counter()
    for k in range(1, max_n + 1):
        for i in range(len(tokens) - k + 1):
            counts[tuple(tokens[i:i + k])] += 1
    return counts


def _effective_ref_length(cand_len: int, ref_lens: List[int], mode: str) -> float:
    if mode == 'closest':
        return min((abs(l - cand_len), l) for l in ref_lens)[1]
    if mode == 'shortest':
        return min(ref_lens)
    if mode == 'average':
        return sum(ref_lens) / len(ref_lens)
    raise ValidationError(f"未知的参考长度模式: {mode}")


def bleu_n(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]], n: int,
           smoothing: bool = False, length_mode: str = 'closest') -> float:
    """
    语料级 BLEU_n：截断 n-gram 精度的几何平均乘以简短惩罚

    Args:
        candidates: 候选描述
        references: 每个候选对应的参考描述列表
        n: 最高阶数 1..4
        smoothing: 对 2 阶及以上精度做加一平滑
        length_mode: 有效参考长度取法 closest / shortest / average

    Returns:
        [0, 1] 内的分数
    """
    if not 1 <= n <= 4:
        raise ValidationError(f"BLEU 阶数必须在 1..4 内: {n}")
    if not candidates:
        raise ValidationError("候选集合为空")
    if len(candidates) != len(references):
        raise ValidationError("候选与参考数量不一致")

    correct = [0] * n
    guess = [0] * n
    cand_total, ref_total = 0, 0.0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValidationError("每个候选至少需要一条参考")
        max_ref = Counter()
        for ref in refs:
            for gram, count in ngram_counts(ref, n).items():
                max_ref[gram] = max(max_ref[gram], count)
        for gram, count in ngram_counts(cand, n).items():
            correct[len(gram) - 1] += min(count, max_ref[gram])
        for k in range(1, n + 1):
            guess[k - 1] += max(0, len(cand) - k + 1)
        cand_total += len(cand)
        ref_total += _effective_ref_length(len(cand), [len(r) for r in refs], length_mode)

    if cand_total == 0:
        return 0.0
    log_precision = 0.0
    for k in range(n):
        if smoothing and k > 0:
            p = (correct[k] + 1) / (guess[k] + 1)
        else:
            p = correct[k] / guess[k] if guess[k] else 0.0
        if p == 0.0:
            return 0.0
        log_precision += math.log(p)
    brevity = math.exp(min(0.0, 1.0 - ref_total / cand_total))
    return brevity * math.exp(log_precision / n)


def lcs_length(a: Tokens, b: Tokens) -> int:
    """最长公共子序列长度（动态规划）"""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(candidate: Tokens, references: Sequence[Tokens], beta: float = ROUGE_BETA) -> float:
    """对每条参考计算 LCS 的 F 值，取最大者"""
    if not candidate or not references:
        raise ValidationError("ROUGE_l 需要非空的候选和参考")
    best = 0.0
    for ref in references:
        lcs = lcs_length(candidate, ref)
        if lcs == 0:
            continue
        precision = lcs / len(candidate)
        recall = lcs / len(ref)
        f = (1 + beta ** 2) * precision * recall / (recall + beta ** 2 * precision)
        best = max(best, f)
    return best


def rouge_l(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]],
            beta: float = ROUGE_BETA) -> Tuple[float, List[float]]:
    """
    空候选（模型立即生成 <eos>）记 0 分

    Returns:
        (语料平均, 每个片段的分数)
    """
    scores = [rouge_l_sentence(c, refs, beta) if c else 0.0
              for c, refs in zip(candidates, references)]
    return sum(scores) / len(scores), scores


def document_frequency(references: Sequence[Sequence[Tokens]], max_n: int = 4) -> Counter:
    """每个 n-gram 出现在多少个片段的参考集合中"""
    df = Counter()
    for refs in references:
        grams = set()
        for ref in refs:
            grams.update(ngram_counts(ref, max_n))
        df.update(grams)
    return df


def _tfidf(counts: Counter, df: Counter, log_docs: float, max_n: int):
    vec = [dict() for _ in range(max_n)]
    norm = [0.0] * max_n
    for gram, tf in counts.items():
        k = len(gram) - 1
        weight = tf * (log_docs - math.log(max(1.0, df[gram])))
        vec[k][gram] = weight
        norm[k] += weight * weight
    return vec, [math.sqrt(x) for x in norm]


def cider_d(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]],
            max_n: int = 4, sigma: float = CIDER_SIGMA) -> Tuple[float, List[float]]:
    """
    CIDEr-D：TF-IDF n-gram 向量的截断余弦相似度，乘以长度差高斯惩罚，
    对参考实际具有的阶数和参考取平均后乘 10。
    描述短于 4 个词时只平均存在的阶，候选与唯一参考相同时每个片段恰为 10

    Returns:
        (语料平均, 每个片段的分数)
    """
    if len(candidates) < 2:
        raise ValidationError("CIDEr-D 至少需要 2 个片段才能计算 IDF（单片段时文档频率退化）")
    if len(candidates) != len(references):
        raise ValidationError("候选与参考数量不一致")
    df = document_frequency(references, max_n)
    log_docs = math.log(float(len(references)))

    scores = []
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValidationError("每个片段至少需要一条参考")
        vec_c, norm_c = _tfidf(ngram_counts(cand, max_n), df, log_docs, max_n)
        per_ref = []
        for ref in refs:
            vec_r, norm_r = _tfidf(ngram_counts(ref, max_n), df, log_docs, max_n)
            penalty = math.exp(-((len(cand) - len(ref)) ** 2) / (2 * sigma ** 2))
            total, orders = 0.0, 0
            for k in range(max_n):
                # 参考没有该阶 n-gram（描述短于 k+1 个词）或该阶 IDF 全为 0 时不计入平均
                if norm_r[k] == 0:
                    continue
                orders += 1
                val = 0.0
                for gram, weight in vec_c[k].items():
                    if gram in vec_r[k]:
                        val += min(weight, vec_r[k][gram]) * vec_r[k][gram]
                if norm_c[k] != 0:
                    val /= norm_c[k] * norm_r[k]
                total += val * penalty
            per_ref.append(total / orders if orders else 0.0)
        scores.append(10.0 * sum(per_ref) / len(per_ref))
    return sum(scores) / len(scores), scores


def score_captions(ids: Sequence[str], candidates: Sequence[Tokens],
                   references: Sequence[Sequence[Tokens]],
                   smoothing: bool = False, length_mode: str = 'closest') -> MetricReport:
    """
    计算整套语料指标以及逐片段分数

    Args:
        ids: 片段 id
        candidates: 候选描述（词序列）
        references: 每个片段的参考描述列表

    Returns:
        指标报告
    """
    if not candidates:
        raise ValidationError("候选集合为空")
    if len(ids) != len(candidates):
        raise ValidationError(f"片段 id 数量 {len(ids)} 与候选数量 {len(candidates)} 不一致")
    bleu = [bleu_n(candidates, references, n, smoothing, length_mode) for n in range(1, 5)]
    rouge, rouge_per_clip = rouge_l(candidates, references)
    cider, cider_per_clip = cider_d(candidates, references)

    per_clip = []
    for i, clip_id in enumerate(ids):
        clip_scores: Dict[str, float] = {
            f'BLEU_{n}': bleu_n([candidates[i]], [references[i]], n, smoothing, length_mode)
            for n in range(1, 5)
        }
        clip_scores['ROUGE_l'] = rouge_per_clip[i]
        clip_scores['CIDEr'] = cider_per_clip[i]
        per_clip.append(ClipScore(id=clip_id, candidate=list(candidates[i]),
                                  references=[list(r) for r in references[i]], scores=clip_scores))
    extras = {'event_recall': event_recall(candidates, references),
              'token_accuracy': token_accuracy(candidates, references)}
    return MetricReport(bleu=bleu, rouge_l=rouge, cider=cider,
                        spider_partial=cider / 2.0, per_clip=per_clip, extras=extras)


def event_recall(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]]) -> float:
    """参考描述中出现的事件词有多少出现在候选中（按词集合微平均）"""
    hit, total = 0, 0
    for cand, refs in zip(candidates, references):
        wanted = {w for ref in refs for w in ref}
        hit += len(wanted & set(cand))
        total += len(wanted)
    return hit / total if total else 0.0


def token_accuracy(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]]) -> float:
    """逐位置完全匹配的比例，分母取两者较长者；多条参考取最好的一条，再对片段取平均"""
    scores = []
    for cand, refs in zip(candidates, references):
        best = 0.0
        for ref in refs:
            width = max(len(cand), len(ref))
            if width:
                best = max(best, sum(a == b for a, b in zip(cand, ref)) / width)
        scores.append(best)
    return sum(scores) / len(scores) if scores else 0.0
