import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.controllers.gradcheck_controller import frontend_case
from src.models.caption_item import FeatureMatrix
from src.models.configs import FrontendConfig
from src.models.errors import FrontendInputError, ShapeMismatchError, ValidationError
from src.services.autodiff_service import Tensor
from src.services.frontend_service import FrontendService
from src.services.gradcheck_service import finite_difference_check
from src.services.optimizer_service import ParameterStore


def tiny_frontend(rng, dtype=np.float64):
    params = ParameterStore(dtype)
    config = FrontendConfig(channels=(4, 8), pool_factors=(2, 2), mel_bins=6)
    return FrontendService(config, params, rng), params


def test_zero_input_gives_zero_output(rng):
    frontend, params = tiny_frontend(rng)
    params["frontend.input.shift"].data[...] = 0.0
    out = frontend.encode(FeatureMatrix(np.zeros((6, 12))))
    assert out.shape == (3, 8)
    assert_array_equal(out.values, 0.0)


def test_default_config_output_shape(rng):
    frontend = FrontendService(FrontendConfig(), ParameterStore(np.float32), rng)
    mel = FeatureMatrix(rng.standard_normal((40, 128)).astype(np.float32))
    assert frontend.encode(mel).shape == (8, 128)


def test_four_blocks_on_64_by_256(rng):
    frontend = FrontendService(FrontendConfig(mel_bins=64), ParameterStore(np.float32), rng)
    mel = FeatureMatrix(rng.standard_normal((64, 256)).astype(np.float32))
    assert frontend.encode(mel).shape == (16, 128)


@pytest.mark.parametrize('frames', [4, 5, 7, 9, 13])
def test_output_frames_round_up(rng, frames):
    frontend, _ = tiny_frontend(rng)
    out = frontend.forward(Tensor(rng.standard_normal((2, 6, frames))))
    assert out.shape == (2, -(-frames // 4), 8)
    assert out.shape[1] == frontend.config.output_frames(frames)


def test_too_short_input_names_minimum(rng):
    frontend, _ = tiny_frontend(rng)
    with pytest.raises(FrontendInputError, match='4'):
        frontend.forward(Tensor(np.zeros((1, 6, 3))))


def test_channels_must_match_pool_factors():
    with pytest.raises(ValidationError):
        FrontendConfig(channels=(4, 8), pool_factors=(2,)).validate()


def test_gradcheck():
    loss_fn, params = frontend_case(np.random.default_rng(42))
    assert finite_difference_check(loss_fn, params, h=1e-5) < 1e-4


def test_time_shift_by_one_stride_shifts_one_node(rng):
    frontend, params = tiny_frontend(rng)
    # 平移量为零时背景为零，时间边界的补零不影响结果
    params["frontend.input.shift"].data[...] = 0.0
    stride = frontend.config.min_frames
    mel = np.zeros((1, 6, 32))
    mel[:, :, 8:20] = rng.standard_normal((1, 6, 12))
    shifted = np.roll(mel, stride, axis=-1)
    out = frontend.forward(Tensor(mel)).data
    out_shifted = frontend.forward(Tensor(shifted)).data
    assert_allclose(out_shifted[:, 1:], out[:, :-1], rtol=0, atol=1e-12)


def test_every_parameter_receives_gradient(rng):
    frontend, params = tiny_frontend(rng)
    out = frontend.forward(Tensor(rng.standard_normal((2, 6, 16))))
    (out * rng.standard_normal(out.shape)).sum().backward()
    for name, p in params.items():
        assert p.grad is not None and np.any(p.grad != 0), name


def test_mel_bins_must_match_config(rng):
    frontend, _ = tiny_frontend(rng)
    with pytest.raises(ShapeMismatchError):
        frontend.forward(Tensor(np.zeros((1, 5, 8))))


def test_different_bands_give_different_nodes(rng):
    frontend, _ = tiny_frontend(rng)
    low = np.zeros((6, 8))
    low[2:3] = 1.0
    high = np.zeros((6, 8))
    high[3:4] = 1.0
    assert not np.allclose(frontend.encode(FeatureMatrix(low)).values,
                           frontend.encode(FeatureMatrix(high)).values)
