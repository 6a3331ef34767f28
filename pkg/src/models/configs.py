from dataclasses import dataclass, field, fields
from math import ceil, prod
from typing import Dict, Tuple

from .errors import ValidationError


def _parse_bool(value: str) -> bool:
    text = str(value).strip().lower()
    if text in ('1', 'true', 'yes', 'on'):
        return True
    if text in ('0', 'false', 'no', 'off'):
        return False
    raise ValidationError(f"无法解析布尔值: {value}")


def _parse_int_tuple(value) -> Tuple[int, ...]:
    if isinstance(value, (tuple, list)):
        return tuple(int(v) for v in value)
    try:
        return tuple(int(v) for v in str(value).split(',') if v.strip())
    except ValueError:
        raise ValidationError(f"无法解析整数列表: {value}")


def _join(values) -> str:
    return ','.join(str(v) for v in values)


@dataclass
class SyntheticSpec:
    """合成事件描述数据集的生成参数"""
    n_clips: int = 512
    n_event_types: int = 20
    mel_bins: int = 40
    frames: int = 128
    min_events: int = 1
    max_events: int = 4
    noise_std: float = 0.1
    event_amplitude: float = 1.0
    seed: int = 42

    def validate(self) -> None:
        if self.n_clips < 1:
            raise ValidationError(f"片段数必须为正: {self.n_clips}")
        if self.n_event_types < 1:
            raise ValidationError(f"事件类型数必须为正: {self.n_event_types}")
        if not 1 <= self.min_events <= self.max_events:
            raise ValidationError(f"每段事件数范围无效: {self.min_events}..{self.max_events}")
        if self.max_events > self.n_event_types:
            raise ValidationError(
                f"每段最多事件数 {self.max_events} 超过事件类型数 {self.n_event_types}")
        if self.mel_bins < self.n_event_types:
            raise ValidationError(f"梅尔频带数 {self.mel_bins} 少于事件类型数，无法分配频带")
        if self.frames < 4:
            raise ValidationError(f"帧数过少: {self.frames}")
        if self.noise_std < 0:
            raise ValidationError(f"噪声标准差不能为负: {self.noise_std}")


@dataclass
class FrontendConfig:
    """卷积前端配置，最后一个通道数即特征维度 D"""
    channels: Tuple[int, ...] = (8, 16, 32, 128)
    pool_factors: Tuple[int, ...] = (2, 2, 2, 2)
    leaky_slope: float = 0.2
    # 输入梅尔频带数，由数据集决定
    mel_bins: int = 40

    @property
    def n_blocks(self) -> int:
        return len(self.channels)

    @property
    def d_model(self) -> int:
        return self.channels[-1]

    @property
    def min_frames(self) -> int:
        return prod(self.pool_factors)

    def output_frames(self, frames: int) -> int:
        return ceil(frames / self.min_frames)

    def validate(self) -> None:
        if not self.channels:
            raise ValidationError("前端至少需要一个卷积块")
        if len(self.channels) != len(self.pool_factors):
            raise ValidationError(
                f"通道列表长度 {len(self.channels)} 与池化因子长度 {len(self.pool_factors)} 不一致")
        if any(c < 1 for c in self.channels) or any(p < 1 for p in self.pool_factors):
            raise ValidationError("通道数和池化因子必须为正")
        if self.mel_bins < 1:
            raise ValidationError(f"梅尔频带数必须为正: {self.mel_bins}")
        if not 0 < self.leaky_slope < 1:
            raise ValidationError(f"LeakyReLU 斜率必须在 (0,1) 内: {self.leaky_slope}")


@dataclass
class GraphAttentionConfig:
    enabled: bool = True
    k: int = 25
    leaky_slope: float = 0.2
    use_topk: bool = True
    share_phi: bool = True

    def validate(self) -> None:
        if self.k < 1:
            raise ValidationError(f"k 必须 >= 1: {self.k}")
        if not 0 < self.leaky_slope < 1:
            raise ValidationError(f"LeakyReLU 斜率必须在 (0,1) 内: {self.leaky_slope}")


@dataclass
class DecoderConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 128
    ff_dim: int = 512
    max_len: int = 16
    vocab_size: int = 0

    def validate(self) -> None:
        if self.n_layers < 1 or self.n_heads < 1:
            raise ValidationError("解码器层数和头数必须为正")
        if self.d_model % self.n_heads != 0:
            raise ValidationError(f"d_model={self.d_model} 不能被 n_heads={self.n_heads} 整除")
        if self.max_len < 1:
            raise ValidationError(f"最大描述长度必须为正: {self.max_len}")
        if self.vocab_size < 5:
            raise ValidationError(f"词表大小过小: {self.vocab_size}")


@dataclass
class ModelConfig:
    """GraphAC 模型整体配置"""
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    graph: GraphAttentionConfig = field(default_factory=GraphAttentionConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    label_smoothing: float = 0.1
    seed: int = 42
    precision: str = 'float32'

    def validate(self) -> None:
        self.frontend.validate()
        self.graph.validate()
        self.decoder.validate()
        if self.frontend.d_model != self.decoder.d_model:
            raise ValidationError(
                f"前端输出维度 {self.frontend.d_model} 与解码器维度 {self.decoder.d_model} 不一致")
        if not 0 <= self.label_smoothing < 1:
            raise ValidationError(f"label smoothing 必须在 [0,1) 内: {self.label_smoothing}")
        if self.precision not in ('float32', 'float64'):
            raise ValidationError(f"不支持的精度: {self.precision}")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    val_ratio: float = 0.1

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs 和 batch_size 必须为正")
        if self.lr <= 0:
            raise ValidationError(f"学习率必须为正: {self.lr}")
        if not 0 <= self.val_ratio < 1:
            raise ValidationError(f"验证集比例必须在 [0,1) 内: {self.val_ratio}")


@dataclass
class EvalConfig:
    beam_size: int = 5
    workers: int = 1
    length_norm: bool = True
    bleu_smoothing: bool = False
    bleu_length: str = 'closest'
    # 评价哪一部分片段: val 按检查点的种子和验证比例重现训练时的切分
    split: str = 'val'

    def validate(self) -> None:
        if self.beam_size < 1:
            raise ValidationError(f"beam_size 必须 >= 1: {self.beam_size}")
        if self.workers < 1:
            raise ValidationError(f"workers 必须 >= 1: {self.workers}")
        if self.bleu_length not in ('closest', 'shortest', 'average'):
            raise ValidationError(f"未知的 BLEU 参考长度模式: {self.bleu_length}")
        if self.split not in ('all', 'train', 'val'):
            raise ValidationError(f"未知的数据划分: {self.split}")


@dataclass
class InspectConfig:
    clip: str = ''
    interp: int = 1
    export_mel: bool = False

    def validate(self) -> None:
        if not self.clip:
            raise ValidationError("必须指定 --clip")
        if self.interp < 1:
            raise ValidationError(f"插值倍数必须 >= 1: {self.interp}")


GRADCHECK_MODULES = ('graph-attention', 'frontend', 'decoder', 'all')


@dataclass
class GradcheckConfig:
    module: str = 'all'
    step: float = 1e-5
    tolerance: float = 1e-4
    seed: int = 42

    def validate(self) -> None:
        if self.module not in GRADCHECK_MODULES:
            raise ValidationError(f"未知模块: {self.module}，可选 {', '.join(GRADCHECK_MODULES)}")
        if self.step <= 0 or self.tolerance <= 0:
            raise ValidationError("step 和 tolerance 必须为正")


# gen-data 的短名 -> SyntheticSpec 字段
SYNTHETIC_ALIASES = {
    'clips': 'n_clips',
    'events': 'n_event_types',
    'noise': 'noise_std',
    'amplitude': 'event_amplitude',
}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return _join(value)
    return str(value)


def _parse_like(value, current):
    if isinstance(current, bool):
        return _parse_bool(value)
    if isinstance(current, tuple):
        return _parse_int_tuple(value)
    return type(current)(value)


def apply_flat(obj, values: Dict[str, str], aliases: Dict[str, str] = None):
    """
    把扁平键值应用到单层配置 dataclass 上，按字段当前值的类型解析

    Args:
        obj: 配置对象（EvalConfig、SyntheticSpec 等）
        values: 键值字典
        aliases: 短名 -> 字段名

    Returns:
        校验通过的同一对象
    """
    aliases = aliases or {}
    names = {f.name for f in fields(obj)}
    for raw_key, raw_value in values.items():
        key = normalize_key(raw_key)
        name = aliases.get(key, key)
        if name not in names:
            raise ValidationError(f"未知配置项: {raw_key}")
        try:
            setattr(obj, name, _parse_like(raw_value, getattr(obj, name)))
        except ValueError as e:
            raise ValidationError(f"配置项 {raw_key} 的值无效: {raw_value} ({e})")
    obj.validate()
    return obj


def to_flat(obj, aliases: Dict[str, str] = None) -> Dict[str, str]:
    reverse = {field_name: key for key, field_name in (aliases or {}).items()}
    return {reverse.get(f.name, f.name): _format_value(getattr(obj, f.name)) for f in fields(obj)}


# 扁平 key=value 键 -> (所属部分, 字段名, 解析函数)
_FLAT_KEYS = {
    'channels': ('frontend', 'channels', _parse_int_tuple),
    'pool': ('frontend', 'pool_factors', _parse_int_tuple),
    'mel_bins': ('frontend', 'mel_bins', int),
    'leaky_slope': ('both', 'leaky_slope', float),
    'graph': ('graph', 'enabled', _parse_bool),
    'k': ('graph', 'k', int),
    'topk': ('graph', 'use_topk', _parse_bool),
    'share_phi': ('graph', 'share_phi', _parse_bool),
    'layers': ('decoder', 'n_layers', int),
    'heads': ('decoder', 'n_heads', int),
    'ff_dim': ('decoder', 'ff_dim', int),
    'max_len': ('decoder', 'max_len', int),
    'vocab_size': ('decoder', 'vocab_size', int),
    'label_smoothing': ('model', 'label_smoothing', float),
    'seed': ('model', 'seed', int),
    'precision': ('model', 'precision', str),
    'epochs': ('train', 'epochs', int),
    'batch_size': ('train', 'batch_size', int),
    'lr': ('train', 'lr', float),
    'val_ratio': ('train', 'val_ratio', float),
}

MODEL_KEYS = tuple(k for k, v in _FLAT_KEYS.items() if v[0] != 'train')
TRAIN_KEYS = tuple(k for k, v in _FLAT_KEYS.items() if v[0] == 'train')


def normalize_key(key: str) -> str:
    return key.strip().lower().replace('-', '_')


def configs_from_flat(values: Dict[str, str],
                      model: ModelConfig = None,
                      train: TrainConfig = None) -> Tuple[ModelConfig, TrainConfig]:
    """
    将扁平的 key=value 字典应用到配置对象上

    Args:
        values: 键值字典，键允许使用 '-' 或 '_'
        model: 基础模型配置（默认使用默认值）
        train: 基础训练配置

    Returns:
        (模型配置, 训练配置)
    """
    model = model or ModelConfig()
    train = train or TrainConfig()
    for raw_key, raw_value in values.items():
        key = normalize_key(raw_key)
        if key not in _FLAT_KEYS:
            raise ValidationError(f"未知配置项: {raw_key}")
        section, name, parse = _FLAT_KEYS[key]
        try:
            value = parse(raw_value)
        except ValueError as e:
            raise ValidationError(f"配置项 {raw_key} 的值无效: {raw_value} ({e})")
        if section == 'both':
            model.frontend.leaky_slope = value
            model.graph.leaky_slope = value
        elif section == 'model':
            setattr(model, name, value)
        elif section == 'train':
            setattr(train, name, value)
        else:
            setattr(getattr(model, section), name, value)
    model.decoder.d_model = model.frontend.d_model
    return model, train


def configs_to_flat(model: ModelConfig, train: TrainConfig = None) -> Dict[str, str]:
    """把配置展开为有序的扁平字典，用于回显和检查点保存"""
    flat = {}
    for key, (section, name, _) in _FLAT_KEYS.items():
        if section == 'train':
            if train is None:
                continue
            value = getattr(train, name)
        elif section == 'both':
            value = model.frontend.leaky_slope
        elif section == 'model':
            value = getattr(model, name)
        else:
            value = getattr(getattr(model, section), name)
        flat[key] = _format_value(value)
    return flat
