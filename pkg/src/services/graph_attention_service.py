"""
图注意力模块：关系系数 -> 逐行 softmax -> top-k 掩码得到邻接图 -> 带残差的节点聚合
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..models.configs import GraphAttentionConfig
from ..models.errors import ShapeMismatchError, ValidationError
from .autodiff_service import Tensor, leaky_relu, softmax, topk_rows
from .optimizer_service import ParameterStore


@dataclass
class GraphAttentionParams:
    W_phi: Tensor
    W_theta: Tensor
    leaky_slope: float = 0.2
    k: int = 25
    use_topk: bool = True
    # 为 None 时聚合复用 W_phi
    W_agg: Optional[Tensor] = None

    @property
    def dim(self) -> int:
        return self.W_phi.shape[0]

    def validate(self) -> None:
        d = self.W_phi.shape[0]
        if self.W_phi.shape != (d, d):
            raise ShapeMismatchError(f"W_phi 必须是方阵，实际 {self.W_phi.shape}")
        if self.W_theta.shape != (1, 2 * d):
            raise ShapeMismatchError(f"W_theta 形状必须为 (1, {2 * d})，实际 {self.W_theta.shape}")
        if self.W_agg is not None and self.W_agg.shape != (d, d):
            raise ShapeMismatchError(f"W_agg 形状必须为 ({d}, {d})，实际 {self.W_agg.shape}")
        if self.k < 1:
            raise ValidationError(f"k 必须 >= 1: {self.k}")


@dataclass
class AdjacencyGraph:
    """邻接图 Â (..., T, T)，k_used = min(k, T)"""
    values: Tensor
    k_used: int

    @property
    def size(self) -> int:
        return self.values.shape[-1]

    def numpy(self) -> np.ndarray:
        return self.values.data


def _check_nodes(x: Tensor, params: GraphAttentionParams) -> None:
    params.validate()
    if x.ndim not in (2, 3):
        raise ShapeMismatchError(f"特征节点必须是 (T, D) 或 (B, T, D)，实际 {x.shape}")
    if x.shape[-1] != params.dim:
        raise ShapeMismatchError(f"特征维度 {x.shape[-1]} 与 W_phi 维度 {params.dim} 不一致")
    if not np.all(np.isfinite(x.data)):
        raise ValidationError("特征节点包含 NaN 或 Inf")


def relation_coefficients(x: Tensor, params: GraphAttentionParams) -> Tensor:
    """
    e_ij = LeakyReLU(W_theta [W_phi x_i ; W_phi x_j])，包括 i=j

    W_theta 拆成前后两半后，关系矩阵等于源节点得分列向量与目标节点得分行向量之和

    Args:
        x: (T, D) 或 (B, T, D) 的特征节点
        params: 图注意力参数

    Returns:
        (..., T, T) 的关系矩阵 E
    """
    _check_nodes(x, params)
    d = params.dim
    h = x @ params.W_phi.T
    source = h @ params.W_theta[:, :d].T
    target = h @ params.W_theta[:, d:].T
    return leaky_relu(source + target.transpose(), params.leaky_slope)


def _row_sum_tolerance(dtype) -> float:
    return 1e-9 if np.dtype(dtype) == np.float64 else 1e-5


def topk_mask(attention_rows: Tensor, k: int, scores: Optional[np.ndarray] = None) -> AdjacencyGraph:
    """
    每行保留最大的 min(k, T) 个注意力权重，其余置零，不重新归一化

    Args:
        attention_rows: softmax 之后的 (..., T, T) 注意力矩阵
        k: 每行保留的邻居数
        scores: 可选的 softmax 之前的关系系数；给出时按它选择，下溢为 0 的权重也能保留

    Returns:
        邻接图
    """
    if k < 1:
        raise ValidationError(f"k 必须 >= 1: {k}")
    sums = attention_rows.data.sum(axis=-1)
    if not np.allclose(sums, 1.0, rtol=0.0, atol=_row_sum_tolerance(attention_rows.dtype)):
        raise ValidationError("top-k 掩码的输入行和必须为 1")
    t = attention_rows.shape[-1]
    k_used = min(k, t)
    return AdjacencyGraph(values=topk_rows(attention_rows, k_used, scores), k_used=k_used)


def aggregate(adj: AdjacencyGraph, x: Tensor, params: GraphAttentionParams) -> Tensor:
    """X̂ = Â X W_phiᵀ + X"""
    _check_nodes(x, params)
    t = x.shape[-2]
    if adj.values.shape[-2:] != (t, t):
        raise ShapeMismatchError(f"邻接图形状 {adj.values.shape} 与节点数 {t} 不一致")
    weight = params.W_agg if params.W_agg is not None else params.W_phi
    return adj.values @ (x @ weight.T) + x


def graph_attention_forward(x: Tensor, params: GraphAttentionParams) -> Tuple[Tensor, AdjacencyGraph]:
    """
    完整的图注意力前向：返回聚合后的特征和邻接图（供检查和导出）
    """
    relations = relation_coefficients(x, params)
    attention = softmax(relations, axis=-1)
    if params.use_topk:
        adj = topk_mask(attention, params.k, relations.data)
    else:
        adj = AdjacencyGraph(values=attention, k_used=attention.shape[-1])
    return aggregate(adj, x, params), adj


class GraphAttentionService:
    """在参数集合中注册图注意力参数并执行前向"""

    def __init__(self, config: GraphAttentionConfig, dim: int, params: ParameterStore,
                 rng: np.random.Generator, prefix: str = 'graph'):
        config.validate()
        self.config = config
        self.params = params
        self.prefix = prefix
        dtype = params.dtype
        scale = 1.0 / np.sqrt(dim)
        params.add(f"{prefix}.W_phi", (rng.standard_normal((dim, dim)) * scale).astype(dtype))
        params.add(f"{prefix}.W_theta", (rng.standard_normal((1, 2 * dim)) * scale).astype(dtype))
        if not config.share_phi:
            params.add(f"{prefix}.W_agg", (rng.standard_normal((dim, dim)) * scale).astype(dtype))

    def parameters(self) -> GraphAttentionParams:
        return GraphAttentionParams(
            W_phi=self.params[f"{self.prefix}.W_phi"],
            W_theta=self.params[f"{self.prefix}.W_theta"],
            leaky_slope=self.config.leaky_slope,
            k=self.config.k,
            use_topk=self.config.use_topk,
            W_agg=None if self.config.share_phi else self.params[f"{self.prefix}.W_agg"],
        )

    def forward(self, x: Tensor) -> Tuple[Tensor, AdjacencyGraph]:
        return graph_attention_forward(x, self.parameters())
