import logging
from pathlib import Path
from typing import List

from ..models.caption_item import CaptionedClip
from ..models.configs import SyntheticSpec
from ..services.feature_service import read_dataset, write_dataset
from ..services.path_service import PathService
from ..services.synthetic_service import generate_synthetic_dataset

logger = logging.getLogger('graphac.dataset')


class DatasetController:
    """数据集控制器，负责合成数据集的生成与读取"""

    def __init__(self, path_service: PathService):
        """
        初始化数据集控制器

        Args:
            path_service: 输出路径服务
        """
        self.path_service = path_service

    def generate(self, spec: SyntheticSpec) -> List[CaptionedClip]:
        """
        生成合成数据集并写到输出目录（captions.tsv + features/）

        Args:
            spec: 生成参数

        Returns:
            生成的片段
        """
        clips = generate_synthetic_dataset(spec)
        write_dataset(self.path_service.output_directory, clips)
        return clips

    def load(self, directory: Path) -> List[CaptionedClip]:
        try:
            return read_dataset(directory)
        except Exception as e:
            logger.error(f"读取数据集失败 {directory}: {str(e)}")
            raise
