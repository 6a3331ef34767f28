from typing import List, Optional, Sequence

import numpy as np

from ..models.caption_item import FeatureMatrix
from ..models.configs import DecoderConfig
from ..models.errors import ShapeMismatchError, ValidationError
from ..models.vocabulary import PAD, SOS, EOS
from .autodiff_service import (Tensor, embedding, layer_norm, masked_fill, no_grad,
                               relu, softmax)
from .beam_search_service import beam_search
from .optimizer_service import ParameterStore


def positional_encoding(n: int, d: int) -> np.ndarray:
    """
    正弦位置编码：位置 p 的第 2i 维为 sin(p/10000^(2i/D))，第 2i+1 维为 cos(同一角度)

    Args:
        n: 位置数 (>= 1)
        d: 维度

    Returns:
        (n, d) 的 float64 数组
    """
    if n < 1:
        raise ValidationError(f"位置数必须 >= 1: {n}")
    positions = np.arange(n, dtype=np.float64)[:, None]
    even = np.arange(0, d, 2, dtype=np.float64)
    angles = positions / np.power(10000.0, even / d)
    table = np.zeros((n, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, :d // 2])
    return table


def causal_mask(n: int) -> np.ndarray:
    """True 表示被屏蔽（未来位置）"""
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class DecoderService:
    """
    Transformer 解码器：词嵌入 + 位置编码，掩码自注意力、对（加了位置编码的）音频节点的交叉注意力、
    前馈层（均为残差 + 后置 LayerNorm），最后线性映射到词表
    """

    def __init__(self, config: DecoderConfig, params: ParameterStore,
                 rng: np.random.Generator, prefix: str = 'decoder'):
        config.validate()
        self.config = config
        self.params = params
        self.prefix = prefix
        d, f, v = config.d_model, config.ff_dim, config.vocab_size
        dtype = params.dtype

        def dense(n_in, n_out):
            return (rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)).astype(dtype)

        params.add(f"{prefix}.embed", (rng.standard_normal((v, d)) / np.sqrt(d)).astype(dtype))
        for layer in range(config.n_layers):
            base = f"{prefix}.layer{layer}"
            for attn in ('self_attn', 'cross_attn'):
                for proj in ('q', 'k', 'v', 'o'):
                    params.add(f"{base}.{attn}.w{proj}", dense(d, d))
                # 键投影没有偏置：它对同一查询的所有得分加同一个常数
                for proj in ('q', 'v', 'o'):
                    params.add(f"{base}.{attn}.b{proj}", np.zeros(d, dtype=dtype))
            params.add(f"{base}.ff.w1", dense(d, f))
            params.add(f"{base}.ff.b1", np.zeros(f, dtype=dtype))
            params.add(f"{base}.ff.w2", dense(f, d))
            params.add(f"{base}.ff.b2", np.zeros(d, dtype=dtype))
            for norm in ('norm1', 'norm2', 'norm3'):
                params.add(f"{base}.{norm}.gamma", np.ones(d, dtype=dtype))
                params.add(f"{base}.{norm}.beta", np.zeros(d, dtype=dtype))
        params.add(f"{prefix}.out.w", dense(d, v))
        params.add(f"{prefix}.out.b", np.zeros(v, dtype=dtype))

        self._pe = positional_encoding(config.max_len, d).astype(dtype)

    def _p(self, name: str) -> Tensor:
        return self.params[f"{self.prefix}.{name}"]

    def _attention(self, base: str, query: Tensor, memory: Tensor,
                   mask: Optional[np.ndarray]) -> Tensor:
        b, n, d = query.shape
        m = memory.shape[1]
        h = self.config.n_heads
        dk = d // h

        def project(x, proj, length):
            y = x @ self._p(f"{base}.w{proj}")
            if proj != 'k':
                y = y + self._p(f"{base}.b{proj}")
            return y.reshape(b, length, h, dk).transpose(0, 2, 1, 3)

        q = project(query, 'q', n)
        k = project(memory, 'k', m)
        v = project(memory, 'v', m)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dk))
        if mask is not None:
            scores = masked_fill(scores, mask, -np.inf)
        weights = softmax(scores, axis=-1)
        out = (weights @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return out @ self._p(f"{base}.wo") + self._p(f"{base}.bo")

    def _layer(self, layer: int, x: Tensor, memory: Tensor, mask: np.ndarray) -> Tensor:
        base = f"layer{layer}"

        def norm(y, name):
            return layer_norm(y, self._p(f"{base}.{name}.gamma"), self._p(f"{base}.{name}.beta"))

        x = norm(x + self._attention(f"{base}.self_attn", x, x, mask), 'norm1')
        x = norm(x + self._attention(f"{base}.cross_attn", x, memory, None), 'norm2')
        hidden = relu(x @ self._p(f"{base}.ff.w1") + self._p(f"{base}.ff.b1"))
        x = norm(x + (hidden @ self._p(f"{base}.ff.w2") + self._p(f"{base}.ff.b2")), 'norm3')
        return x

    def decode_teacher_forced(self, x_hat: Tensor, tokens) -> Tensor:
        """
        教师强制解码：位置 n 的 logits 只依赖 X̂ 和第 0..n 个输入词

        Args:
            x_hat: (B, T, D) 或 (T, D) 的编码器输出
            tokens: (B, N) 或 (N,) 的输入词索引，以 <sos> 开头

        Returns:
            (B, N, V) 或 (N, V) 的 logits
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        single = tokens.ndim == 1
        if single:
            tokens = tokens[None]
            x_hat = x_hat.reshape(1, *x_hat.shape)
        b, n = tokens.shape
        v = self.config.vocab_size
        if x_hat.ndim != 3 or x_hat.shape[0] != b or x_hat.shape[-1] != self.config.d_model:
            raise ShapeMismatchError(f"编码器输出形状 {x_hat.shape} 与词序列 {tokens.shape} 不匹配")
        if n < 1 or n > self.config.max_len:
            raise ValidationError(f"输入长度 {n} 超出 [1, {self.config.max_len}]")
        if tokens.min() < 0 or tokens.max() >= v:
            raise ValidationError(f"词索引超出词表范围 [0, {v})")
        if np.any(tokens[:, 0] != SOS):
            raise ValidationError("解码器输入必须以 <sos> 开头")

        x = embedding(self._p('embed'), tokens) * np.sqrt(self.config.d_model) \
            + Tensor(self._pe[:n])
        # 图模块对节点置换等变，节点的时间顺序只能从这里加入
        memory = x_hat + Tensor(positional_encoding(x_hat.shape[1], self.config.d_model)
                                .astype(self.params.dtype))
        mask = causal_mask(n)
        for layer in range(self.config.n_layers):
            x = self._layer(layer, x, memory, mask)
        logits = x @ self._p('out.w') + self._p('out.b')
        return logits.reshape(n, v) if single else logits

    def next_token_log_probs(self, x_hat: np.ndarray, prefixes: np.ndarray) -> np.ndarray:
        """对一批以 <sos> 开头的前缀，返回下一个词的对数概率 (H, V)"""
        h = prefixes.shape[0]
        memory = Tensor(np.broadcast_to(x_hat, (h,) + x_hat.shape).astype(self.params.dtype))
        with no_grad():
            logits = self.decode_teacher_forced(memory, prefixes).data[:, -1, :]
        return log_softmax_np(logits.astype(np.float64))

    def beam_search(self, x_hat, beam_size: int = 5, max_len: Optional[int] = None,
                    length_norm: bool = True) -> List[int]:
        """
        束搜索解码单个片段

        Args:
            x_hat: (T, D) 的编码器输出（FeatureMatrix、Tensor 或数组）
            beam_size: 束宽
            max_len: 最大生成长度，默认取配置的 max_len
            length_norm: 是否按长度归一化对数概率

        Returns:
            生成的词索引（不含 <sos>，若生成了 <eos> 则以它结尾）
        """
        if isinstance(x_hat, FeatureMatrix):
            x_hat = x_hat.values
        elif isinstance(x_hat, Tensor):
            x_hat = x_hat.data
        max_len = max_len or self.config.max_len
        best = beam_search(lambda prefixes: self.next_token_log_probs(x_hat, prefixes),
                           beam_size=beam_size, max_len=min(max_len, self.config.max_len),
                           sos=SOS, eos=EOS, banned=(PAD, SOS), length_norm=length_norm)
        return list(best.tokens)


def pad_sequences(sequences: Sequence[Sequence[int]], pad: int = PAD) -> np.ndarray:
    width = max(len(s) for s in sequences)
    out = np.full((len(sequences), width), pad, dtype=np.int64)
    for i, s in enumerate(sequences):
        out[i, :len(s)] = s
    return out
