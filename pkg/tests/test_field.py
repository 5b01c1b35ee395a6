import numpy as np
import pytest
import torch

from meshstyle.field import (
    DirectStyle,
    EncodingConfig,
    StyleField,
    encode,
    field_from_config,
    parameter_partition,
)
from meshstyle.mesh import apply_style
from meshstyle.primitives import icosphere


def rand_points(n, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(n, 3, generator=g, dtype=dtype) - 0.5


def randomize_heads(field, scale=0.1, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for head in (field.color_branch[-1], field.displ_branch[-1]):
            head.weight.copy_(torch.randn(head.weight.shape, generator=g, dtype=head.weight.dtype) * scale)
            head.bias.copy_(torch.randn(head.bias.shape, generator=g, dtype=head.bias.dtype) * scale)


def test_encode_origin():
    cfg = EncodingConfig(num_frequencies=16)
    g = encode(torch.zeros(1, 3, dtype=torch.float64), cfg)
    assert torch.equal(g[0, :16], torch.ones(16, dtype=torch.float64))
    assert torch.equal(g[0, 16:], torch.zeros(16, dtype=torch.float64))


def test_encode_hand_evaluated():
    B = torch.tensor([[1.0, 0, 0], [0, 1.0, 0]], dtype=torch.float64)
    g = encode(torch.tensor([[0.25, 0.0, 0.0]], dtype=torch.float64), EncodingConfig(num_frequencies=2), B)
    # [cos(pi/2), cos(0), sin(pi/2), sin(0)]
    assert torch.allclose(g[0], torch.tensor([0.0, 1.0, 1.0, 0.0], dtype=torch.float64), atol=1e-15)


def test_encode_symmetry_bit_exact():
    cfg = EncodingConfig(symmetry_axes=("z",))
    p = rand_points(100)
    q = p * torch.tensor([1.0, 1.0, -1.0], dtype=torch.float64)
    assert torch.equal(encode(p, cfg), encode(q, cfg))
    assert not torch.equal(encode(p, EncodingConfig()), encode(q, EncodingConfig()))


def test_default_feature_dim():
    f = StyleField()
    assert f.B.shape == (128, 3)
    assert f.trunk[0].in_features == 256
    assert sum(isinstance(m, torch.nn.Linear) for m in f.trunk) == 4
    assert sum(isinstance(m, torch.nn.Linear) for m in f.color_branch) == 3
    assert f.color_branch[-1].out_features == 3 and f.displ_branch[-1].out_features == 1


def test_sigma_sets_frequency_scale():
    B = StyleField(EncodingConfig(sigma=5.0, num_frequencies=4096)).B.double()
    assert float(B.std()) == pytest.approx(5.0, rel=0.03)


def test_fresh_field_is_identity():
    f = StyleField()
    out = f(rand_points(500, dtype=torch.float32))
    assert torch.all(out.colors == 0.5)
    assert torch.all(out.displacements == 0)


def test_fresh_field_apply_style_identity():
    m = icosphere(2).to(torch.float32)
    styled = apply_style(m, StyleField()(m.vertices), colored=True)
    assert torch.equal(styled.vertices, m.vertices)
    assert torch.all(styled.vertex_colors == 0.5)


@pytest.mark.parametrize("dtype", [torch.float32, torch.float64])
def test_output_bounds_under_saturation(dtype):
    f = StyleField(dtype=dtype)
    randomize_heads(f, scale=1e4)
    out = f(rand_points(2000, dtype=dtype)).detach()
    assert torch.all(out.displacements.abs() < 0.1)
    assert torch.all((out.colors > 0) & (out.colors < 1))
    # saturated at both ends
    assert float(out.colors.max()) > 0.999 and float(out.colors.min()) < 0.001


def test_determinism():
    a, b = StyleField(EncodingConfig(seed=3)), StyleField(EncodingConfig(seed=3))
    randomize_heads(a)
    randomize_heads(b)
    p = rand_points(64, dtype=torch.float32)
    assert torch.equal(a(p).colors, b(p).colors)
    assert torch.equal(a(p).displacements, b(p).displacements)
    assert not torch.equal(StyleField(EncodingConfig(seed=4)).B, a.B)


def test_partition_is_exhaustive_and_disjoint():
    f = StyleField()
    geo, col = parameter_partition(f)
    ids_g, ids_c = {id(p) for p in geo}, {id(p) for p in col}
    assert not ids_g & ids_c
    assert ids_g | ids_c == {id(p) for p in f.parameters()}
    assert id(f.B) not in ids_g | ids_c
    assert not f.B.requires_grad
    assert {id(p) for p in f.trunk.parameters()} <= ids_g


def test_direct_style_partition():
    d = DirectStyle(10)
    geo, col = parameter_partition(d)
    assert geo == [d.raw_displacements] and col == [d.raw_colors]
    out = d(torch.zeros(10, 3))
    assert torch.all(out.colors == 0.5) and torch.all(out.displacements == 0)


def test_gradient_matches_central_differences():
    f = StyleField(EncodingConfig(num_frequencies=16), width=32, dtype=torch.float64)
    randomize_heads(f, scale=0.5)
    p = rand_points(20)
    wc = torch.randn(20, 3, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    wd = torch.randn(20, generator=torch.Generator().manual_seed(2), dtype=torch.float64)

    def scalar():
        out = f(p)
        return (out.colors * wc).sum() + (out.displacements * wd).sum()

    params = list(f.parameters())
    grads = torch.autograd.grad(scalar(), params)
    rng = np.random.default_rng(0)
    h = 1e-5
    for _ in range(20):
        k = int(rng.integers(len(params)))
        i = int(rng.integers(params[k].numel()))
        flat = params[k].data.view(-1)
        orig = float(flat[i])
        with torch.no_grad():
            flat[i] = orig + h
            up = float(scalar())
            flat[i] = orig - h
            down = float(scalar())
            flat[i] = orig
        fd = (up - down) / (2 * h)
        an = float(grads[k].view(-1)[i])
        assert abs(an - fd) <= 1e-4 * max(abs(an), abs(fd), 1e-8), (k, i, an, fd)


def _mean_abs_jacobian_fd(sigma, points, h=1e-6):
    cfg = EncodingConfig(sigma=sigma, seed=11)
    total = 0.0
    for axis in range(3):
        e = torch.zeros(3, dtype=torch.float64)
        e[axis] = h
        d = (encode(points + e, cfg) - encode(points - e, cfg)) / (2 * h)
        total += float(d.abs().mean())
    return total / 3


def test_spectral_control():
    p = rand_points(1000, seed=5)
    vals = [_mean_abs_jacobian_fd(s, p) for s in (3.0, 5.0, 8.0)]
    assert vals[0] < vals[1] < vals[2]


def test_symmetric_field_bit_exact():
    f = StyleField(EncodingConfig(symmetry_axes=("z",)))
    randomize_heads(f)
    p = rand_points(1000, dtype=torch.float32)
    q = p * torch.tensor([1.0, 1.0, -1.0])
    a, b = f(p), f(q)
    assert torch.equal(a.colors, b.colors) and torch.equal(a.displacements, b.displacements)


def test_no_encoding_ablation():
    f = StyleField(use_encoding=False)
    assert f.trunk[0].in_features == 3


def test_config_round_trip():
    f = StyleField(EncodingConfig(num_frequencies=8, sigma=3.0, symmetry_axes=("x", "z"), seed=9), width=16)
    g = field_from_config(f.config_dict())
    g.load_state_dict(f.state_dict())
    p = rand_points(10, dtype=torch.float32)
    assert torch.equal(f(p).colors, g(p).colors)


def test_bad_config():
    with pytest.raises(ValueError):
        EncodingConfig(num_frequencies=0)
    with pytest.raises(ValueError):
        EncodingConfig(sigma=0)
    with pytest.raises(ValueError):
        EncodingConfig(symmetry_axes=("w",))
