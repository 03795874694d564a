import pytest
import torch
from torch.autograd import gradcheck

from src.core.config import ModelConfig
from src.core.error_handler import ConfigError, ShapeError
from src.model.network import (
    AttentionGate,
    AttentionUNet,
    depth_to_space,
    init_model,
    parameter_count,
    reconstruct,
    space_to_depth,
)


def _config(**overrides) -> ModelConfig:
    params = dict(in_views=5, encoder_channels=(4, 8, 16), upscale=3)
    params.update(overrides)
    return ModelConfig(**params)


def test_output_is_upscaled_single_channel():
    model = init_model(_config(), seed=0)
    out = model(torch.randn(2, 5, 16, 12))
    assert out.shape == (2, 1, 48, 36)


def test_input_must_be_divisible_by_encoder_depth():
    model = init_model(_config(), seed=0)
    with pytest.raises(ShapeError, match="not divisible by 4"):
        model(torch.randn(1, 5, 10, 12))


def test_view_count_is_checked():
    model = init_model(_config(), seed=0)
    with pytest.raises(ShapeError, match="expects 5 views"):
        model(torch.randn(1, 4, 16, 16))
    with pytest.raises(ShapeError):
        model(torch.randn(5, 16, 16))


def test_unresolved_view_count():
    with pytest.raises(ConfigError):
        AttentionUNet(_config(in_views=None))


def test_initialization_is_seeded_and_isolated():
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    first = init_model(_config(), seed=7)
    assert torch.equal(torch.rand(3), expected)

    second = init_model(_config(), seed=7)
    third = init_model(_config(), seed=8)
    for a, b in zip(first.parameters(), second.parameters()):
        assert torch.equal(a, b)
    assert any(not torch.equal(a, c) for a, c in zip(first.parameters(), third.parameters()))


def test_refinement_starts_as_identity():
    model = init_model(_config(), seed=0)
    assert model.head.refine.weight.item() == 1.0
    assert model.head.refine.bias.item() == 0.0
    assert model.head.prelu.weight.item() == pytest.approx(0.25)


def test_parameter_count_grows_with_width():
    assert parameter_count(init_model(_config(encoder_channels=(8, 16, 32)), 0)) > \
        parameter_count(init_model(_config(), 0))


def test_attention_map_is_a_gate():
    gate = AttentionGate(gate_channels=4, skip_channels=4, inter_channels=2)
    x, g = torch.randn(2, 4, 6, 6), torch.randn(2, 4, 6, 6)
    alpha = gate.attention_map(x, g)
    assert alpha.shape == (2, 1, 6, 6)
    assert alpha.min() >= 0 and alpha.max() <= 1
    assert torch.allclose(gate(x, g), x * alpha)
    with pytest.raises(ShapeError):
        gate(x, torch.randn(2, 4, 3, 3))


# ----------------------------------------------------------------------
# sub-pixel rearrangement
# ----------------------------------------------------------------------
def test_depth_to_space_index_mapping():
    r = 3
    t = torch.arange(9 * 2 * 2, dtype=torch.float64).reshape(1, 9, 2, 2)
    out = depth_to_space(t, r)
    assert out.shape == (1, 1, 6, 6)
    for h in range(2):
        for w in range(2):
            for dy in range(r):
                for dx in range(r):
                    assert out[0, 0, r * h + dy, r * w + dx] == t[0, r * dy + dx, h, w]


def test_space_to_depth_inverts():
    image = torch.randn(2, 1, 9, 12)
    assert torch.equal(depth_to_space(space_to_depth(image, 3), 3), image)
    with pytest.raises(ShapeError):
        space_to_depth(torch.randn(1, 1, 8, 9), 3)
    with pytest.raises(ShapeError):
        depth_to_space(torch.randn(1, 4, 2, 2), 3)


# ----------------------------------------------------------------------
# inference / gradients
# ----------------------------------------------------------------------
def test_reconstruct_is_deterministic():
    model = init_model(_config(), seed=1)
    views = torch.rand(5, 8, 8)
    first = reconstruct(model, views)
    second = reconstruct(model, views)
    assert first.shape == (1, 24, 24)
    assert not model.training
    assert torch.equal(first, second)


def test_gradients_match_finite_differences():
    model = init_model(ModelConfig(in_views=2, encoder_channels=(2, 4), upscale=2), seed=3,
                       dtype=torch.float64)
    model.eval()
    views = torch.rand(1, 2, 4, 4, dtype=torch.float64, requires_grad=True)
    assert gradcheck(model, (views,), eps=1e-6, atol=1e-5)
