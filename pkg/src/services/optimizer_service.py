from dataclasses import dataclass, field
from typing import Dict, Iterator

import numpy as np

from ..models.errors import MissingGradientError, ShapeMismatchError, ValidationError
from .autodiff_service import Tensor, get_default_dtype


class ParameterStore:
    """按名称管理可训练参数，保持插入顺序，所有参数使用同一精度"""

    def __init__(self, dtype=None):
        self._params: Dict[str, Tensor] = {}
        self.dtype = np.dtype(dtype or get_default_dtype())

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValidationError(f"参数重名: {name}")
        tensor = Tensor(np.array(value, dtype=self.dtype), requires_grad=True)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    @property
    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """
        按名称载入参数值

        Args:
            state: 名称到数组的映射，必须与当前参数一一对应
        """
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValidationError(f"参数集合不一致: 缺少 {sorted(missing)}，多余 {sorted(extra)}")
        for name, p in self._params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeMismatchError(f"参数 {name} 形状不一致: {value.shape} vs {p.shape}")
            p.data = value.astype(p.dtype)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterStore, state: AdamState) -> ParameterStore:
    """
    带偏差修正的 Adam 更新，更新后梯度清零

    Args:
        params: 所有参数都必须已经有梯度
        state: 优化器状态，step_count 每次加 1

    Returns:
        原地更新后的参数集合
    """
    for name, p in params.items():
        if p.grad is None:
            raise MissingGradientError(f"参数 {name} 没有梯度")

    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        p.data = (p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype)
        p.grad = np.zeros_like(p.data)
    return params

