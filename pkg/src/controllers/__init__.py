# 导出控制器类
from .dataset_controller import DatasetController
from .evaluation_controller import EvaluationController
from .gradcheck_controller import GradcheckController
from .training_controller import TrainingController

__all__ = ['DatasetController', 'EvaluationController', 'GradcheckController', 'TrainingController']
