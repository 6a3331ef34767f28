from typing import Dict, Iterable, List

from .errors import ValidationError

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ('<pad>', '<sos>', '<eos>', '<unk>')


class Vocabulary:
    """词表：词与索引的双向映射，前四个索引固定为保留符号"""

    def __init__(self, tokens: Iterable[str] = ()):
        self._tokens: List[str] = list(RESERVED_TOKENS)
        self._index: Dict[str, int] = {t: i for i, t in enumerate(self._tokens)}
        for token in tokens:
            self.add(token)

    @classmethod
    def build(cls, captions: Iterable[Iterable[str]]) -> 'Vocabulary':
        """
        由参考描述构建词表，词按字典序排列以保证确定性

        Args:
            captions: 词序列的集合

        Returns:
            新词表
        """
        words = sorted({w for caption in captions for w in caption} - set(RESERVED_TOKENS))
        return cls(words)

    def add(self, token: str) -> int:
        if not token or any(c.isspace() for c in token):
            raise ValidationError(f"非法词条: {token!r}")
        if token not in self._index:
            self._index[token] = len(self._tokens)
            self._tokens.append(token)
        return self._index[token]

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    @property
    def tokens(self) -> List[str]:
        return list(self._tokens)

    def index(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token(self, index: int) -> str:
        if not 0 <= index < len(self._tokens):
            raise ValidationError(f"索引 {index} 超出词表范围 [0, {len(self._tokens)})")
        return self._tokens[index]

    def encode(self, words: Iterable[str]) -> List[int]:
        """词序列 -> [<sos>, ..., <eos>]，未登录词映射为 <unk>"""
        return [SOS] + [self.index(w) for w in words] + [EOS]

    def decode(self, indices: Iterable[int]) -> List[str]:
        """索引序列 -> 词序列，去掉 <pad>/<sos>/<eos>"""
        return [self.token(int(i)) for i in indices if int(i) not in (PAD, SOS, EOS)]

    def missing(self, words: Iterable[str]) -> List[str]:
        return sorted({w for w in words if w not in self._index})
