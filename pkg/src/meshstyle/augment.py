"""Random perspective / crop augmentations and embedder input normalization.

Images are (H, W, 3) or (N, H, W, 3) tensors. Every augmentation is a single
bilinear resampling, so it stays differentiable with respect to the pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


@dataclass(frozen=True)
class AugmentConfig:
    n_aug: int = 1
    crop_area_fraction: float = 0.10
    perspective_distortion: float = 0.5
    mean: tuple[float, float, float] = CLIP_MEAN
    std: tuple[float, float, float] = CLIP_STD
    enabled: bool = True  # False: both families become the identity
    crop: bool = True  # False: the local family is perspective only

    def __post_init__(self):
        if not 0 < self.crop_area_fraction <= 1:
            raise ValueError("crop_area_fraction must lie in (0, 1]")
        if self.n_aug < 1:
            raise ValueError("n_aug must be >= 1")
        if not 0 <= self.perspective_distortion <= 1:
            raise ValueError("perspective_distortion must lie in [0, 1]")


@dataclass(frozen=True)
class WarpDraw:
    """One sampled augmentation: output->input homography plus optional square crop."""

    homography: np.ndarray
    crop: tuple[int, int, int] | None = None  # (x0, y0, side)


def crop_side(size: int, area_fraction: float) -> int:
    """Side of a square crop covering ``area_fraction`` of a ``size``-square image."""
    return max(1, min(size, math.floor(math.sqrt(area_fraction) * size)))


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 H with H @ [src, 1] ~ [dst, 1] for four point pairs."""
    A, b = [], []
    for (x, y), (u, v) in zip(src, dst):
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b += [u, v]
    h = np.linalg.solve(np.asarray(A, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def draw_perspective(size: int, distortion: float, rng: np.random.Generator) -> np.ndarray:
    """Image corners move inward by up to ``distortion`` * half the side.

    The returned matrix maps output pixel coordinates to input coordinates, so
    the full input lands on the distorted quad.
    """
    if distortion == 0:
        return np.eye(3)
    s = size - 1
    r = distortion * (size // 2)
    o = rng.uniform(0, r, size=(4, 2))
    start = np.array([[0, 0], [s, 0], [s, s], [0, s]], dtype=np.float64)
    end = np.array(
        [[o[0, 0], o[0, 1]], [s - o[1, 0], o[1, 1]], [s - o[2, 0], s - o[2, 1]], [o[3, 0], s - o[3, 1]]]
    )
    return _homography(end, start)


def draw_crop(size: int, area_fraction: float, rng: np.random.Generator) -> tuple[int, int, int]:
    """Crop centered on a uniformly drawn pixel, shifted back inside the image.

    Uniform window positions would reach a corner pixel only once in
    ``(size - c + 1)**2`` draws; clamping gives border windows enough mass
    that every pixel is seen.
    """
    c = crop_side(size, area_fraction)
    cx, cy = rng.integers(0, size, size=2)
    x0 = min(max(int(cx) - c // 2, 0), size - c)
    y0 = min(max(int(cy) - c // 2, 0), size - c)
    return x0, y0, c


def draw_global(size: int, cfg: AugmentConfig, rng: np.random.Generator) -> WarpDraw:
    if not cfg.enabled:
        return WarpDraw(np.eye(3))
    return WarpDraw(draw_perspective(size, cfg.perspective_distortion, rng))


def draw_local(size: int, cfg: AugmentConfig, rng: np.random.Generator) -> WarpDraw:
    if not cfg.enabled:
        return WarpDraw(np.eye(3))
    crop = draw_crop(size, cfg.crop_area_fraction, rng) if cfg.crop else None
    return WarpDraw(draw_perspective(size, cfg.perspective_distortion, rng), crop)


def _sample_coords(size: int, draw: WarpDraw) -> np.ndarray:
    """Input pixel coordinates (size, size, 2) sampled by each output pixel."""
    s = np.arange(size, dtype=np.float64)
    xs, ys = np.meshgrid(s, s)
    q = draw.homography @ np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)])
    u = np.clip(q[0] / q[2], 0, size - 1)
    v = np.clip(q[1] / q[2], 0, size - 1)
    if draw.crop is not None:
        x0, y0, c = draw.crop
        # bilinear resize of the crop up to ``size`` (half-pixel centers), edge-clamped
        u = np.clip(x0 + (u + 0.5) * c / size - 0.5, x0, x0 + c - 1)
        v = np.clip(y0 + (v + 0.5) * c / size - 0.5, y0, y0 + c - 1)
    return np.stack([u, v], axis=-1).reshape(size, size, 2)


def warp(images: torch.Tensor, draws: WarpDraw | list[WarpDraw]) -> torch.Tensor:
    """Apply one draw per image. Out-of-range samples replicate the border."""
    single = images.ndim == 3
    if single:
        images = images[None]
        draws = [draws]
    N, H, W, _ = images.shape
    if H != W:
        raise ValueError("augmentations expect square images")
    grid = np.stack([_sample_coords(H, d) for d in draws])
    grid = torch.as_tensor(2 * grid / (H - 1) - 1, dtype=images.dtype)
    out = F.grid_sample(
        images.permute(0, 3, 1, 2), grid, mode="bilinear", padding_mode="border", align_corners=True
    ).permute(0, 2, 3, 1)
    return out[0] if single else out


def psi_global(image: torch.Tensor, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> torch.Tensor:
    return warp(image, draw_global(image.shape[-2], cfg, rng))


def psi_local(image: torch.Tensor, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> torch.Tensor:
    return warp(image, draw_local(image.shape[-2], cfg, rng))


def clip_normalize(image: torch.Tensor, mean=CLIP_MEAN, std=CLIP_STD) -> torch.Tensor:
    m = torch.as_tensor(mean, dtype=image.dtype)
    s = torch.as_tensor(std, dtype=image.dtype)
    return (image - m) / s


def clip_denormalize(image: torch.Tensor, mean=CLIP_MEAN, std=CLIP_STD) -> torch.Tensor:
    m = torch.as_tensor(mean, dtype=image.dtype)
    s = torch.as_tensor(std, dtype=image.dtype)
    return image * s + m
