from pathlib import Path
from typing import Dict, Tuple


class PathService:
    """路径服务，集中管理某个输出根目录下的所有文件位置"""

    _instances: Dict[Path, 'PathService'] = {}

    def __new__(cls, root='output'):
        key = Path(root).resolve()
        if key not in cls._instances:
            instance = super().__new__(cls)
            instance._initialize(Path(root))
            cls._instances[key] = instance
        return cls._instances[key]

    def _initialize(self, root: Path):
        """初始化所有路径"""
        self.output_dir = root
        self.checkpoint_dir = root / "checkpoint"
        self.log_dir = root / "logs"
        self.output_dir.mkdir(parents=True, exist_ok=True)

    @property
    def output_directory(self) -> Path:
        """获取主输出目录路径"""
        return self.output_dir

    @property
    def checkpoint_directory(self) -> Path:
        return self.checkpoint_dir

    @property
    def log_file(self) -> Path:
        self.log_dir.mkdir(exist_ok=True)
        return self.log_dir / "graphac.log"

    @property
    def train_report_file(self) -> Path:
        return self.output_dir / "train_report.tsv"

    @property
    def metrics_file(self) -> Path:
        return self.output_dir / "metrics.tsv"

    @property
    def eval_captions_file(self) -> Path:
        """评价时生成的描述，格式与数据集的 captions.tsv 相同"""
        return self.output_dir / "eval_captions.tsv"

    def adjacency_files(self, clip_id: str) -> Tuple[Path, Path, Path]:
        """(<id>_adj.fmat, <id>_adj.pgm, <id>_mel.pgm)"""
        return (self.output_dir / f"{clip_id}_adj.fmat",
                self.output_dir / f"{clip_id}_adj.pgm",
                self.output_dir / f"{clip_id}_mel.pgm")
