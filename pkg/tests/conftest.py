import numpy as np
import pytest

from src.models.configs import (DecoderConfig, FrontendConfig, GraphAttentionConfig, ModelConfig,
                                SyntheticSpec)
from src.services.synthetic_service import generate_synthetic_dataset


def tiny_model_config(precision: str = 'float32', graph: bool = True, k: int = 3,
                      label_smoothing: float = 0.1, seed: int = 42) -> ModelConfig:
    """两个卷积块、D=8 的小模型，单元测试和 CLI 测试共用"""
    return ModelConfig(
        frontend=FrontendConfig(channels=(4, 8), pool_factors=(2, 2), mel_bins=8),
        graph=GraphAttentionConfig(enabled=graph, k=k),
        decoder=DecoderConfig(n_layers=1, n_heads=2, d_model=8, ff_dim=16, max_len=6),
        label_smoothing=label_smoothing,
        seed=seed,
        precision=precision,
    )


def tiny_spec(n_clips: int = 8, seed: int = 42, **overrides) -> SyntheticSpec:
    values = dict(n_clips=n_clips, n_event_types=4, mel_bins=8, frames=16,
                  min_events=1, max_events=2, seed=seed)
    values.update(overrides)
    return SyntheticSpec(**values)


# CLI 测试中与 tiny_model_config 对应的参数
TINY_TRAIN_FLAGS = ['--channels', '4,8', '--pool', '2,2', '--layers', '1', '--heads', '2',
                    '--ff-dim', '16', '--max-len', '6', '--k', '3']


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_clips():
    return generate_synthetic_dataset(tiny_spec())
