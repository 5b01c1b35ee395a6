import numpy as np
import pytest
import torch

from meshstyle.augment import (
    CLIP_MEAN,
    CLIP_STD,
    AugmentConfig,
    WarpDraw,
    clip_denormalize,
    clip_normalize,
    crop_side,
    draw_crop,
    draw_perspective,
    psi_global,
    psi_local,
    warp,
)


def rand_image(size=64, seed=0, dtype=torch.float64):
    return torch.rand(size, size, 3, generator=torch.Generator().manual_seed(seed), dtype=dtype)


def test_zero_distortion_global_is_identity():
    img = rand_image()
    out = psi_global(img, np.random.default_rng(0), AugmentConfig(perspective_distortion=0.0))
    assert out.shape == img.shape
    assert torch.allclose(out, img, atol=1e-6)


def test_full_crop_without_distortion_is_identity():
    img = rand_image()
    out = psi_local(img, np.random.default_rng(0), AugmentConfig(crop_area_fraction=1.0, perspective_distortion=0.0))
    assert torch.allclose(out, img, atol=1e-6)


def test_crop_side_area_rule():
    assert crop_side(224, 0.10) == 70
    assert crop_side(224, 1.0) == 224


def test_shapes_preserved():
    img = rand_image(96)
    rng = np.random.default_rng(1)
    assert psi_global(img, rng).shape == img.shape
    assert psi_local(img, rng).shape == img.shape
    batch = torch.stack([img, img])
    assert warp(batch, [WarpDraw(np.eye(3)), WarpDraw(np.eye(3))]).shape == batch.shape


def test_constant_image_stays_constant():
    img = torch.full((64, 64, 3), 0.37, dtype=torch.float64)
    for seed in range(5):
        rng = np.random.default_rng(seed)
        assert torch.allclose(psi_local(img, rng), img, atol=1e-12)
        assert torch.allclose(psi_global(img, rng), img, atol=1e-12)


def test_fixed_rng_is_bit_identical():
    img = rand_image()
    a = psi_local(img, np.random.default_rng(4))
    b = psi_local(img, np.random.default_rng(4))
    assert torch.equal(a, b)
    c = psi_global(img, np.random.default_rng(4))
    d = psi_global(img, np.random.default_rng(4))
    assert torch.equal(c, d)


def test_perspective_moves_corners_inward():
    H = draw_perspective(64, 0.5, np.random.default_rng(0))
    # the input corners land inside the output, each moved by at most 0.5 * 32 px
    inv = np.linalg.inv(H)
    for x, y in [(0, 0), (63, 0), (63, 63), (0, 63)]:
        u, v, w = inv @ np.array([x, y, 1.0])
        u, v = u / w, v / w
        assert -1e-9 <= u <= 63 + 1e-9 and -1e-9 <= v <= 63 + 1e-9
        assert max(abs(u - x), abs(v - y)) <= 16 + 1e-9


def test_local_is_differentiable_at_random_pixels():
    img = rand_image(48)
    weights = rand_image(48, seed=1)
    cfg = AugmentConfig()

    def f(x):
        return (psi_local(x, np.random.default_rng(9), cfg) * weights).sum()

    x = img.clone().requires_grad_(True)
    (grad,) = torch.autograd.grad(f(x), x)
    rng = np.random.default_rng(9)
    x0, y0, c = draw_crop(48, cfg.crop_area_fraction, rng)
    pick = np.random.default_rng(2)
    h = 1e-4
    for _ in range(3):
        # pixels inside the crop so the derivative is generically nonzero
        i, j, ch = int(y0 + pick.integers(c)), int(x0 + pick.integers(c)), int(pick.integers(3))
        up, down = img.clone(), img.clone()
        up[i, j, ch] += h
        down[i, j, ch] -= h
        fd = (float(f(up)) - float(f(down))) / (2 * h)
        an = float(grad[i, j, ch])
        assert abs(an - fd) <= 1e-2 * max(abs(fd), abs(an), 1e-8)


def test_crops_cover_every_pixel():
    rng = np.random.default_rng(0)
    hit = np.zeros((224, 224), dtype=bool)
    for _ in range(10_000):
        x0, y0, c = draw_crop(224, 0.10, rng)
        hit[y0 : y0 + c, x0 : x0 + c] = True
    assert hit.all()


def test_disabled_augmentation_is_identity():
    img = rand_image()
    cfg = AugmentConfig(enabled=False)
    assert torch.equal(psi_local(img, np.random.default_rng(0), cfg), img)
    assert torch.equal(psi_global(img, np.random.default_rng(0), cfg), img)


def test_clip_normalize_values():
    mean = torch.tensor(CLIP_MEAN, dtype=torch.float64)
    assert torch.equal(clip_normalize(mean), torch.zeros(3, dtype=torch.float64))
    ones = clip_normalize(torch.ones(3, dtype=torch.float64))
    assert np.allclose(ones.numpy(), [1.930, 2.074, 2.146], atol=1e-3)
    expect = [(1 - m) / s for m, s in zip(CLIP_MEAN, CLIP_STD)]
    assert np.allclose(ones.numpy(), expect, rtol=1e-15)


def test_clip_round_trip():
    img = rand_image(seed=3, dtype=torch.float32)
    assert torch.allclose(clip_denormalize(clip_normalize(img)), img, atol=1e-6)


def test_bad_config():
    with pytest.raises(ValueError):
        AugmentConfig(crop_area_fraction=0)
    with pytest.raises(ValueError):
        AugmentConfig(n_aug=0)
