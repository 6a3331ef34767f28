import logging
from typing import Callable, Optional

import numpy as np

from ..models.errors import NonDeterministicLossError, ValidationError
from .autodiff_service import Tensor, no_grad
from .optimizer_service import ParameterStore

logger = logging.getLogger('graphac.gradcheck')


def _evaluate(loss_fn: Callable[[], Tensor]) -> float:
    with no_grad():
        return float(loss_fn().data)


def finite_difference_check(loss_fn: Callable[[], Tensor],
                            params: ParameterStore,
                            h: float = 1e-5,
                            max_coords: Optional[int] = None,
                            seed: int = 0) -> float:
    """
    用中心差分核对解析梯度

    Args:
        loss_fn: 无参数、返回标量张量的确定性损失函数（读取 params 中的当前值）
        params: 待检查的参数集合
        h: 差分步长
        max_coords: 每个参数最多抽查的坐标数，None 表示全部检查
        seed: 抽查坐标时使用的随机种子

    Returns:
        所有坐标上 |a-n| / max(|a|, |n|, 1e-8) 的最大值
    """
    if h <= 0:
        raise ValidationError(f"差分步长必须为正: {h}")

    first = _evaluate(loss_fn)
    second = _evaluate(loss_fn)
    if first != second:
        raise NonDeterministicLossError(f"损失函数不确定: {first!r} != {second!r}")

    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        p.data = np.ascontiguousarray(p.data)
        # flat 是 p.data 的视图，原地扰动
        flat = p.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            indices = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        grad_flat = analytic[name].reshape(-1)
        for i in indices:
            original = flat[i]
            flat[i] = original + h
            f_plus = _evaluate(loss_fn)
            flat[i] = original - h
            f_minus = _evaluate(loss_fn)
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(grad_flat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > worst:
                worst = err
                logger.debug(f"{name}{np.unravel_index(i, p.shape)}: 解析={a:.6e} 数值={numeric:.6e} 相对误差={err:.3e}")
    params.zero_grad()
    return worst
