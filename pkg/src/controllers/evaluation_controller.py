import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence

from ..models.caption_item import CaptionedClip
from ..models.configs import EvalConfig, InspectConfig
from ..models.errors import ValidationError, VocabularyMismatchError
from ..models.reports import MetricReport
from ..services.captioning_service import CaptioningService
from ..services.feature_service import write_captions, write_feature_matrix
from ..services.heatmap_service import save_heatmap
from ..services.metric_service import score_captions
from ..services.path_service import PathService
from ..services.synthetic_service import split_dataset

logger = logging.getLogger('graphac.eval')


def check_vocabulary(model: CaptioningService, clips: Sequence[CaptionedClip]) -> None:
    """数据中的参考词必须都在检查点词表里，否则说明数据与检查点不匹配"""
    words = {w for clip in clips for ref in clip.references for w in ref}
    missing = model.vocab.missing(words)
    if missing:
        shown = ', '.join(missing[:10])
        raise VocabularyMismatchError(
            f"数据中有 {len(missing)} 个词不在检查点词表中: {shown}{' ...' if len(missing) > 10 else ''}")


def select_split(clips: Sequence[CaptionedClip], split: str, val_ratio: float, seed: int) -> List[CaptionedClip]:
    if split == 'all':
        return list(clips)
    train, val = split_dataset(list(clips), val_ratio, seed)
    return val if split == 'val' else train


class EvaluationController:
    """评价与邻接图导出"""

    def __init__(self, path_service: PathService):
        self.path_service = path_service

    def decode_all(self, model: CaptioningService, clips: Sequence[CaptionedClip],
                   config: EvalConfig) -> Dict[str, List[str]]:
        """
        并行解码所有片段，结果按片段 id 排序

        Args:
            model: 模型（只读共享）
            clips: 待解码片段
            config: 束宽、线程数等

        Returns:
            片段 id -> 生成的词序列
        """
        ordered = sorted(clips, key=lambda c: c.id)

        def decode(clip: CaptionedClip) -> List[str]:
            words = model.caption(clip.features, config.beam_size, config.length_norm)
            logger.debug(f"{clip.id}: {' '.join(words)}")
            return words

        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            captions = list(pool.map(decode, ordered))
        return {clip.id: words for clip, words in zip(ordered, captions)}

    def evaluate(self, model: CaptioningService, clips: Sequence[CaptionedClip],
                 config: EvalConfig, write: bool = True) -> MetricReport:
        """
        束搜索解码并计算 BLEU_1..4、ROUGE_l、CIDEr-D 以及事件召回率和逐词准确率

        Args:
            model: 检查点载入的模型
            clips: 评价片段
            config: 评价配置
            write: 是否写出 metrics.tsv 和 eval_captions.tsv

        Returns:
            指标报告（记录所用束宽）
        """
        config.validate()
        if not clips:
            raise ValidationError("评价集为空")
        check_vocabulary(model, clips)
        candidates = self.decode_all(model, clips, config)
        references = {clip.id: clip.references for clip in clips}
        ids = list(candidates)
        report = score_captions(ids, [candidates[i] for i in ids], [references[i] for i in ids],
                                smoothing=config.bleu_smoothing, length_mode=config.bleu_length)
        report.beam_size = config.beam_size
        logger.info(f"评价完成 ({len(ids)} 个片段, beam={config.beam_size}):\n{report.to_table()}")

        if write:
            with open(self.path_service.metrics_file, 'w', encoding='utf-8', newline='\n') as f:
                f.writelines(f"{line}\n" for line in report.to_lines())
            write_captions(self.path_service.eval_captions_file, {i: [candidates[i]] for i in ids})
        return report

    def export_adjacency(self, model: CaptioningService, clips: Sequence[CaptionedClip],
                         config: InspectConfig) -> Dict[str, Optional[str]]:
        """
        导出指定片段的邻接图：原始值 (FMAT) 和双线性放大的灰度热力图 (PGM)

        Returns:
            写出的文件路径
        """
        config.validate()
        by_id = {clip.id: clip for clip in clips}
        if config.clip not in by_id:
            raise ValidationError(f"--clip 指定的片段不存在: {config.clip}")
        clip = by_id[config.clip]
        adjacency = model.adjacency(clip.features)

        fmat_path, pgm_path, mel_path = self.path_service.adjacency_files(clip.id)
        write_feature_matrix(fmat_path, adjacency)
        save_heatmap(pgm_path, adjacency, config.interp)
        written = {'adjacency': str(fmat_path), 'heatmap': str(pgm_path), 'mel': None}
        if config.export_mel:
            save_heatmap(mel_path, clip.features.values, config.interp)
            written['mel'] = str(mel_path)
        nodes = adjacency.shape[0]
        k_used = min(model.config.graph.k, nodes) if model.config.graph.use_topk else nodes
        logger.info(f"{clip.id}: 邻接图 {nodes}x{nodes}, k_used={k_used}")
        return written
