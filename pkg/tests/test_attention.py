import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from hpmr.attention import (ChannelGate, FullAttention, SpatialGate, channel_gate,
                            full_attention, spatial_gate)
from hpmr.errors import ShapeError

from helpers import channel_gate_loops, gradient_check, spatial_gate_loops


def _rand(shape, seed):
    return torch.from_numpy(np.random.default_rng(seed).standard_normal(shape))


def test_spatial_zero_params_scale_by_one_and_a_half():
    x = _rand((2, 3, 4, 4), 0)
    out = spatial_gate(x, torch.zeros(16, 16, dtype=x.dtype), torch.zeros(16, dtype=x.dtype))
    assert torch.equal(out, 1.5 * x)


def test_spatial_zero_input():
    w, b = _rand((16, 16), 1), _rand(16, 2)
    out = spatial_gate(torch.zeros(2, 3, 4, 4, dtype=w.dtype), w, b)
    assert torch.count_nonzero(out) == 0


def test_spatial_matches_loops():
    x, w, b = _rand((2, 3, 4, 4), 3), _rand((16, 16), 4), _rand(16, 5)
    expected = spatial_gate_loops(x.numpy(), w.numpy(), b.numpy())
    np.testing.assert_allclose(spatial_gate(x, w, b).numpy(), expected, atol=1e-6)
    expected = spatial_gate_loops(x.numpy(), w.numpy(), b.numpy(), residual=False)
    np.testing.assert_allclose(spatial_gate(x, w, b, residual=False).numpy(), expected, atol=1e-6)


def test_channel_zero_params():
    x = _rand((1, 4, 3, 3), 6)
    out = channel_gate(x, torch.zeros(4, 4, dtype=x.dtype), torch.zeros(4, dtype=x.dtype))
    assert torch.equal(out, 1.5 * x)


def test_channel_saturated_gate_passes_through():
    x = _rand((1, 1, 5, 5), 7).abs()
    out = channel_gate(x, torch.full((1, 1), -1e4, dtype=x.dtype), torch.full((1,), -10.0, dtype=x.dtype))
    assert torch.max(torch.abs(out - x)) <= 1e-4


def test_channel_matches_loops():
    x, w, b = _rand((1, 4, 3, 3), 8), _rand((4, 4), 9), _rand(4, 10)
    expected = channel_gate_loops(x.numpy(), w.numpy(), b.numpy())
    np.testing.assert_allclose(channel_gate(x, w, b).numpy(), expected, atol=1e-6)


def test_full_attention_zero_params():
    x = _rand((2, 3, 4, 4), 11)
    z16, z3 = torch.zeros(16, 16, dtype=x.dtype), torch.zeros(3, 3, dtype=x.dtype)
    out = full_attention(x, (z16, z16[0]), (z3, z3[0]))
    assert torch.equal(out, 1.5 * (1.5 * x))
    torch.testing.assert_close(out, 2.25 * x, rtol=1e-15, atol=0)


def test_full_attention_zero_input():
    out = full_attention(torch.zeros(2, 3, 4, 4, dtype=torch.float64),
                         (_rand((16, 16), 1), _rand(16, 2)), (_rand((3, 3), 3), _rand(3, 4)))
    assert torch.count_nonzero(out) == 0


def test_full_attention_is_composition_of_oracles():
    x = _rand((2, 3, 4, 4), 12)
    ws, bs, wc, bc = _rand((16, 16), 13), _rand(16, 14), _rand((3, 3), 15), _rand(3, 16)
    expected = channel_gate_loops(spatial_gate_loops(x.numpy(), ws.numpy(), bs.numpy()),
                                  wc.numpy(), bc.numpy())
    np.testing.assert_allclose(full_attention(x, (ws, bs), (wc, bc)).numpy(), expected, atol=1e-6)


def test_shape_errors():
    x = torch.zeros(1, 3, 4, 4)
    with pytest.raises(ShapeError):
        spatial_gate(x, torch.zeros(9, 9), torch.zeros(9))
    with pytest.raises(ShapeError):
        channel_gate(x, torch.zeros(4, 4), torch.zeros(4))
    with pytest.raises(ShapeError):
        SpatialGate(128, 128)


@settings(max_examples=30, deadline=None)
@given(b=st.integers(1, 3), c=st.integers(1, 5), h=st.integers(1, 6), w=st.integers(1, 6),
       seed=st.integers(0, 10_000))
def test_shape_preservation_and_gate_bound(b, c, h, w, seed):
    torch.manual_seed(seed)
    mod = FullAttention(c, h, w).double()
    x = _rand((b, c, h, w), seed)
    f_pro = mod.spatial(x)
    out = mod(x)
    assert out.shape == x.shape
    # each gate lies in (0, 1), so a stage at most doubles the sup-norm
    assert f_pro.abs().max() <= 2 * x.abs().max() + 1e-12
    assert out.abs().max() <= 2 * f_pro.abs().max() + 1e-12


def test_module_init():
    torch.manual_seed(0)
    g = SpatialGate(4, 4)
    assert torch.count_nonzero(g.bias) == 0
    assert g.weight.abs().max() <= 1 / 4
    c = ChannelGate(9)
    assert c.weight.abs().max() <= 1 / 3


def test_gradients_match_finite_differences():
    torch.manual_seed(0)
    mod = FullAttention(3, 4, 4).double()
    x = _rand((2, 3, 4, 4), 17)
    results = gradient_check(lambda: mod(x).sum(), list(mod.named_parameters()), 60, seed=1)
    worst = max(r[-1] for r in results)
    assert worst <= 1e-3, [r for r in results if r[-1] > 1e-3]


def test_deterministic():
    torch.manual_seed(0)
    mod = FullAttention(3, 4, 4)
    x = torch.rand(2, 3, 4, 4)
    assert torch.equal(mod(x), mod(x))


def test_disabled_stages_are_identity():
    mod = FullAttention(3, 4, 4, spatial=False, channel=False)
    x = torch.rand(1, 3, 4, 4)
    assert torch.equal(mod(x), x)
    assert len(list(mod.parameters())) == 0
