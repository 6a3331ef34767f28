"""
基于 numpy 的反向模式自动微分

Tensor 持有数据、梯度以及产生它的 Function；每个可微算子实现为 Function
子类的 forward/backward。只提供 GraphAC 流水线真正用到的算子。
"""
import threading
from typing import Optional, Tuple

import numpy as np

from ..models.errors import NonFiniteError, ShapeMismatchError, ValidationError

_state = threading.local()

_DEFAULT_DTYPE = np.float64


def get_default_dtype():
    return _DEFAULT_DTYPE


def is_grad_enabled() -> bool:
    return getattr(_state, 'grad_enabled', True)


class no_grad:
    """在当前线程内关闭计算图记录"""

    def __enter__(self):
        self._prev = is_grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, np.ndarray) and dtype is None and data.dtype in (np.float32, np.float64):
        return data
    return np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """把广播后的梯度求和还原到原始形状"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def check_finite(array: np.ndarray, what: str = '张量') -> None:
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"{what}包含 NaN 或 Inf")


class Tensor:
    """计算图节点：值、惰性分配的梯度、父节点引用"""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data: np.ndarray = _as_array(data, dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._ctx: Optional['Function'] = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> 'Tensor':
        return self.transpose()

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # *** 反向传播 ***
    def _topological_order(self):
        order, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValidationError(f"只能对标量调用 backward，当前形状 {self.shape}")
            grad = np.ones_like(self.data)
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(self._topological_order()):
            ctx = node._ctx
            if ctx is None or node.grad is None:
                continue
            grads = ctx.backward(node.grad)
            if not isinstance(grads, tuple):
                grads = (grads,)
            for parent, g in zip(ctx.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.shape:
                    raise ShapeMismatchError(f"梯度形状 {g.shape} 与张量形状 {parent.shape} 不一致")
                parent.grad = g if parent.grad is None else parent.grad + g
            # 中间节点的梯度用完即释放
            if node is not self:
                node._ctx = None
                node.grad = None

    # *** 运算符 ***
    def __add__(self, other):
        return Add.apply(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return Sub.apply(self, _lift(other, self))

    def __rsub__(self, other):
        return Sub.apply(_lift(other, self), self)

    def __mul__(self, other):
        return Mul.apply(self, _lift(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return Mul.apply(self, _lift(-1.0, self))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ValidationError("只支持除以常数")
        return Mul.apply(self, _lift(1.0 / other, self))

    def __matmul__(self, other):
        return MatMul.apply(self, other)

    def __getitem__(self, key):
        return GetItem.apply(self, key=key)

    def sum(self, axis=None, keepdims: bool = False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        total = self.sum(axis=axis, keepdims=keepdims)
        count = self.data.size // max(1, total.data.size)
        return total * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes):
        if not axes:
            axes = tuple(range(self.ndim - 2)) + (self.ndim - 1, self.ndim - 2)
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


class Function:
    """可微算子基类：forward 计算值，backward 返回每个父节点的梯度"""

    def __init__(self, *parents: Tensor, **kwargs):
        self.parents = parents
        self.kwargs = kwargs

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray):
        raise NotImplementedError

    @classmethod
    def apply(cls, *parents: Tensor, **kwargs) -> Tensor:
        ctx = cls(*parents, **kwargs)
        out = Tensor(ctx.forward(*[p.data for p in parents]))
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._ctx = ctx
        return out


class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        a, b = self.parents
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        a, b = self.parents
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)


class Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, grad):
        a, b = self.parents
        return (_unbroadcast(grad * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(grad * a.data, b.shape) if b.requires_grad else None)


class MatMul(Function):
    def forward(self, a, b):
        if a.shape[-1] != b.shape[-2]:
            raise ShapeMismatchError(f"矩阵乘法形状不匹配: {a.shape} @ {b.shape}")
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.parents
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(grad, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), grad), b.shape)
        return ga, gb


class Sum(Function):
    def forward(self, a):
        return np.sum(a, axis=self.kwargs['axis'], keepdims=self.kwargs['keepdims'])

    def backward(self, grad):
        (a,) = self.parents
        axis = self.kwargs['axis']
        if axis is not None and not self.kwargs['keepdims']:
            grad = np.expand_dims(grad, axis)
        return np.broadcast_to(grad, a.shape).copy()


class Reshape(Function):
    def forward(self, a):
        return a.reshape(self.kwargs['shape'])

    def backward(self, grad):
        return grad.reshape(self.parents[0].shape)


class Transpose(Function):
    def forward(self, a):
        return np.transpose(a, self.kwargs['axes'])

    def backward(self, grad):
        return np.transpose(grad, np.argsort(self.kwargs['axes']))


class GetItem(Function):
    def forward(self, a):
        return a[self.kwargs['key']]

    def backward(self, grad):
        (a,) = self.parents
        out = np.zeros_like(a.data)
        np.add.at(out, self.kwargs['key'], grad)
        return out


class LeakyReLU(Function):
    # x=0 处的次梯度取 slope
    def forward(self, x):
        check_finite(x, 'LeakyReLU 输入')
        slope = self.kwargs['slope']
        return np.where(x > 0, x, slope * x)

    def backward(self, grad):
        x = self.parents[0].data
        return grad * np.where(x > 0, 1.0, self.kwargs['slope']).astype(x.dtype)


class ReLU(Function):
    def forward(self, x):
        return np.maximum(x, 0)

    def backward(self, grad):
        return grad * (self.parents[0].data > 0)


class Softmax(Function):
    """沿指定轴的 softmax，先减去最大值保证数值稳定；允许 -inf（被屏蔽位置）"""

    def forward(self, x):
        axis = self.kwargs['axis']
        shifted = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / np.sum(e, axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        axis = self.kwargs['axis']
        y = self.out
        return y * (grad - np.sum(grad * y, axis=axis, keepdims=True))


class MaskedFill(Function):
    def forward(self, x):
        return np.where(self.kwargs['mask'], self.kwargs['value'], x).astype(x.dtype)

    def backward(self, grad):
        return np.where(self.kwargs['mask'], 0.0, grad).astype(grad.dtype)


class TopKMask(Function):
    """
    每行保留最大的 k 个元素，其余置零；相等时保留列号较小者

    给出 scores 时按 scores 排序选择，保留的元素不低于 floor。
    选择结构视为常量，梯度只流经保留且未被抬升的元素
    """

    def forward(self, x):
        k = self.kwargs['k']
        scores = self.kwargs.get('scores')
        key = x if scores is None else scores
        order = np.argsort(-key, axis=-1, kind='stable')[..., :k]
        self.mask = np.zeros(x.shape, dtype=bool)
        np.put_along_axis(self.mask, order, True, axis=-1)
        floor = self.kwargs.get('floor')
        if floor is None:
            self.passes = self.mask
            return np.where(self.mask, x, 0.0).astype(x.dtype)
        self.passes = self.mask & (x >= floor)
        return np.where(self.mask, np.maximum(x, floor), 0.0).astype(x.dtype)

    def backward(self, grad):
        return np.where(self.passes, grad, 0.0).astype(grad.dtype)


class LayerNorm(Function):
    def forward(self, x, gamma, beta):
        eps = self.kwargs['eps']
        mean = x.mean(axis=-1, keepdims=True)
        centered = x - mean
        var = (centered ** 2).mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.x_hat = centered * self.inv_std
        return self.x_hat * gamma + beta

    def backward(self, grad):
        x, gamma, beta = self.parents
        d = x.shape[-1]
        g_hat = grad * gamma.data
        gx = (self.inv_std / d) * (d * g_hat - g_hat.sum(axis=-1, keepdims=True)
                                   - self.x_hat * (g_hat * self.x_hat).sum(axis=-1, keepdims=True))
        ggamma = _unbroadcast(grad * self.x_hat, gamma.shape)
        gbeta = _unbroadcast(grad, beta.shape)
        return gx, ggamma, gbeta


class Embedding(Function):
    def forward(self, weight):
        indices = self.kwargs['indices']
        if indices.size and (indices.min() < 0 or indices.max() >= weight.shape[0]):
            raise ValidationError(f"词索引超出范围 [0, {weight.shape[0]})")
        return weight[indices]

    def backward(self, grad):
        (weight,) = self.parents
        out = np.zeros_like(weight.data)
        np.add.at(out, self.kwargs['indices'], grad)
        return out


class Conv2d(Function):
    """
    步长 1、零填充的二维卷积（im2col 实现）

    输入 (B, C_in, H, W)，权重 (C_out, C_in, kh, kw)，输出 (B, C_out, H, W)
    """

    def forward(self, x, w):
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ShapeMismatchError(f"卷积形状不匹配: 输入 {x.shape}, 权重 {w.shape}")
        kh, kw = w.shape[2], w.shape[3]
        ph, pw = kh // 2, kw // 2
        b, c, h, wd = x.shape
        padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
        # (B, H, W, C_in, kh, kw) -> (B*H*W, C_in*kh*kw)
        self.cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(b * h * wd, -1)
        out = self.cols @ w.reshape(w.shape[0], -1).T
        return np.ascontiguousarray(out.reshape(b, h, wd, -1).transpose(0, 3, 1, 2))

    def backward(self, grad):
        x, w = self.parents
        b, c, h, wd = x.shape
        c_out, _, kh, kw = w.shape
        ph, pw = kh // 2, kw // 2
        g = grad.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gw = (g.T @ self.cols).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g @ w.data.reshape(c_out, -1)).reshape(b, h, wd, c, kh, kw)
            padded = np.zeros((b, c, h + 2 * ph, wd + 2 * pw), dtype=grad.dtype)
            for i in range(kh):
                for j in range(kw):
                    padded[:, :, i:i + h, j:j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = padded[:, :, ph:ph + h, pw:pw + wd]
        return gx, gw


class AvgPoolLast(Function):
    """沿最后一个轴做平均池化；末尾不足一个窗口时只对实际帧求平均（ceil 模式）"""

    def forward(self, x):
        p = self.kwargs['factor']
        t = x.shape[-1]
        t_out = -(-t // p)
        padded = np.zeros(x.shape[:-1] + (t_out * p,), dtype=x.dtype)
        padded[..., :t] = x
        counts = np.full(t_out, p, dtype=x.dtype)
        counts[-1] = t - (t_out - 1) * p
        self.counts = counts
        return padded.reshape(x.shape[:-1] + (t_out, p)).sum(axis=-1) / counts

    def backward(self, grad):
        (x,) = self.parents
        p = self.kwargs['factor']
        t = x.shape[-1]
        spread = np.repeat(grad / self.counts, p, axis=-1)
        return spread[..., :t]


class CrossEntropyLabelSmoothed(Function):
    """
    带标签平滑的交叉熵：目标类概率 1-eps，其余每类 eps/(V-1)；按掩码取平均
    """

    def forward(self, logits):
        targets = self.kwargs['targets']
        mask = self.kwargs['mask']
        eps = self.kwargs['epsilon']
        v = logits.shape[-1]
        shifted = logits - logits.max(axis=-1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        log_p = shifted - log_z
        q = np.full(logits.shape, eps / (v - 1), dtype=logits.dtype)
        np.put_along_axis(q, targets[..., None], 1.0 - eps, axis=-1)
        self.q = q
        self.p = np.exp(log_p)
        self.count = max(1, int(mask.sum()))
        per_position = -(q * log_p).sum(axis=-1)
        return np.asarray((per_position * mask).sum() / self.count, dtype=logits.dtype)

    def backward(self, grad):
        mask = self.kwargs['mask']
        return grad * (self.p - self.q) * mask[..., None] / self.count


# *** 函数式接口 ***
def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0 < slope < 1:
        raise ValidationError(f"LeakyReLU 斜率必须在 (0,1) 内: {slope}")
    return LeakyReLU.apply(x, slope=slope)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def softmax_rows(m: Tensor) -> Tensor:
    """二维矩阵的逐行 softmax，每行为正且和为 1"""
    if m.ndim != 2:
        raise ShapeMismatchError(f"softmax_rows 需要二维矩阵，实际形状 {m.shape}")
    if m.data.size == 0:
        raise ValidationError("softmax_rows 的输入矩阵为空")
    check_finite(m.data, 'softmax 输入')
    return Softmax.apply(m, axis=-1)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    return MaskedFill.apply(x, mask=np.broadcast_to(mask, x.shape), value=value)


def topk_rows(x: Tensor, k: int, scores: Optional[np.ndarray] = None) -> Tensor:
    """
    scores 为与 x 同形状的排序依据（如 softmax 之前的 logits）。
    softmax 下溢为 0 的元素仍按原始分数参与选择，且保留后不低于该精度的最小正规数
    """
    if k < 1:
        raise ValidationError(f"k 必须 >= 1: {k}")
    k = min(k, x.shape[-1])
    if scores is None:
        return TopKMask.apply(x, k=k)
    scores = np.asarray(scores)
    if scores.shape != x.shape:
        raise ShapeMismatchError(f"排序分数形状 {scores.shape} 与输入 {x.shape} 不一致")
    return TopKMask.apply(x, k=k, scores=scores, floor=np.finfo(x.dtype).tiny)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def embedding(weight: Tensor, indices) -> Tensor:
    return Embedding.apply(weight, indices=np.asarray(indices, dtype=np.int64))


def conv2d(x: Tensor, weight: Tensor) -> Tensor:
    return Conv2d.apply(x, weight)


def avg_pool_last(x: Tensor, factor: int) -> Tensor:
    if factor == 1:
        return x
    return AvgPoolLast.apply(x, factor=factor)


def cross_entropy_label_smoothed(logits: Tensor, targets, epsilon: float = 0.0,
                                 mask: Optional[np.ndarray] = None) -> Tensor:
    """
    带标签平滑的交叉熵损失

    Args:
        logits: (..., V) 的未归一化得分
        targets: 与 logits 前导维度相同的目标索引
        epsilon: 平滑系数，0 <= epsilon < 1
        mask: 参与平均的位置（填充位置为 False），默认全部参与

    Returns:
        标量损失
    """
    targets = np.asarray(targets, dtype=np.int64)
    v = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ShapeMismatchError(f"目标形状 {targets.shape} 与 logits 形状 {logits.shape} 不匹配")
    if not 0 <= epsilon < 1:
        raise ValidationError(f"label smoothing 必须在 [0,1) 内: {epsilon}")
    if v < 2:
        raise ValidationError("词表大小至少为 2")
    if mask is None:
        mask = np.ones(targets.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    live = targets[mask]
    if live.size and (live.min() < 0 or live.max() >= v):
        raise ValidationError(f"目标索引超出范围 [0, {v})")
    safe_targets = np.where(mask, targets, 0)
    return CrossEntropyLabelSmoothed.apply(logits, targets=safe_targets,
                                           mask=mask.astype(logits.dtype), epsilon=epsilon)
