"""Neural style field: Fourier features -> shared trunk -> color / displacement branches."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import torch
from torch import nn

from .errors import DimensionError

MAX_DISPLACEMENT = 0.1
_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class EncodingConfig:
    num_frequencies: int = 128
    sigma: float = 5.0
    symmetry_axes: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.num_frequencies < 1:
            raise ValueError("num_frequencies must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        axes = tuple(sorted({a.lower() for a in self.symmetry_axes}))
        bad = [a for a in axes if a not in _AXES]
        if bad:
            raise ValueError(f"unknown symmetry axes {bad}")
        object.__setattr__(self, "symmetry_axes", axes)

    @property
    def feature_dim(self) -> int:
        return 2 * self.num_frequencies


@dataclass
class StyleOutput:
    """Per-vertex colors (n, 3) and normal displacements (n,)."""

    colors: torch.Tensor
    displacements: torch.Tensor

    def __post_init__(self):
        if self.colors.ndim != 2 or self.colors.shape[1] != 3:
            raise DimensionError(f"colors must be (n, 3), got {tuple(self.colors.shape)}")
        if self.displacements.shape != (self.colors.shape[0],):
            raise DimensionError("displacements must be (n,) matching colors")

    def __len__(self) -> int:
        return self.colors.shape[0]

    @classmethod
    def zeros(cls, n: int, dtype=torch.float64) -> "StyleOutput":
        return cls(torch.full((n, 3), 0.5, dtype=dtype), torch.zeros(n, dtype=dtype))

    def detach(self) -> "StyleOutput":
        return StyleOutput(self.colors.detach(), self.displacements.detach())


def symmetry_map(points: torch.Tensor, axes: Iterable[str]) -> torch.Tensor:
    idx = [_AXES[a] for a in axes]
    if not idx:
        return points
    mask = torch.zeros(3, dtype=torch.bool, device=points.device)
    mask[idx] = True
    return torch.where(mask, points.abs(), points)


def fourier_features(points: torch.Tensor, B: torch.Tensor) -> torch.Tensor:
    proj = 2 * math.pi * points @ B.T
    return torch.cat([torch.cos(proj), torch.sin(proj)], dim=-1)


def gaussian_frequencies(cfg: EncodingConfig, dtype=torch.float32) -> torch.Tensor:
    g = torch.Generator().manual_seed(cfg.seed)
    return (torch.randn(cfg.num_frequencies, 3, generator=g, dtype=torch.float64) * cfg.sigma).to(dtype)


def encode(points: torch.Tensor, cfg: EncodingConfig, B: torch.Tensor | None = None) -> torch.Tensor:
    """Positional encoding of unit-box points, shape (n, 2k).

    ``B`` defaults to the seeded Gaussian draw for ``cfg``; pass it explicitly to
    reuse a field's frozen matrix.
    """
    if B is None:
        B = gaussian_frequencies(cfg, points.dtype)
    return fourier_features(symmetry_map(points, cfg.symmetry_axes), B.to(points.dtype))


def _squash(raw: torch.Tensor) -> torch.Tensor:
    # tanh saturates to exactly +-1 in finite precision; shrink by a few ulps so
    # the open-interval bounds hold for any weights.
    return torch.tanh(raw) * (1 - 4 * torch.finfo(raw.dtype).eps)


def _mlp(in_dim: int, width: int, depth: int) -> list[nn.Module]:
    layers: list[nn.Module] = []
    for i in range(depth):
        layers += [nn.Linear(in_dim if i == 0 else width, width), nn.ReLU()]
    return layers


class StyleField(nn.Module):
    """Maps unit-box vertex positions to (color, displacement).

    With ``use_encoding=False`` the raw coordinates feed the trunk directly
    (the no-Fourier-feature ablation).
    """

    def __init__(
        self,
        cfg: EncodingConfig = EncodingConfig(),
        width: int = 256,
        trunk_depth: int = 4,
        branch_depth: int = 2,
        use_encoding: bool = True,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.cfg = cfg
        self.use_encoding = use_encoding
        self.width, self.trunk_depth, self.branch_depth = width, trunk_depth, branch_depth
        self.register_buffer("B", gaussian_frequencies(cfg, dtype))
        in_dim = cfg.feature_dim if use_encoding else 3
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed + 1)
            self.trunk = nn.Sequential(*_mlp(in_dim, width, trunk_depth))
            self.color_branch = nn.Sequential(*_mlp(width, width, branch_depth), nn.Linear(width, 3))
            self.displ_branch = nn.Sequential(*_mlp(width, width, branch_depth), nn.Linear(width, 1))
        for head in (self.color_branch[-1], self.displ_branch[-1]):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)
        self.to(dtype)

    def features(self, points: torch.Tensor) -> torch.Tensor:
        points = symmetry_map(points, self.cfg.symmetry_axes)
        if not self.use_encoding:
            return points
        return fourier_features(points, self.B)

    def forward(self, points: torch.Tensor) -> StyleOutput:
        h = self.trunk(self.features(points.to(self.B.dtype)))
        colors = 0.5 + _squash(self.color_branch(h)) / 2
        displacements = MAX_DISPLACEMENT * _squash(self.displ_branch(h)).squeeze(-1)
        return StyleOutput(colors, displacements)

    evaluate = forward

    def parameter_partition(self) -> tuple[list[nn.Parameter], list[nn.Parameter]]:
        geometry = list(self.trunk.parameters()) + list(self.displ_branch.parameters())
        return geometry, list(self.color_branch.parameters())

    def config_dict(self) -> dict:
        return {
            "kind": "mlp",
            "num_frequencies": self.cfg.num_frequencies,
            "sigma": self.cfg.sigma,
            "symmetry_axes": list(self.cfg.symmetry_axes),
            "seed": self.cfg.seed,
            "width": self.width,
            "trunk_depth": self.trunk_depth,
            "branch_depth": self.branch_depth,
            "use_encoding": self.use_encoding,
        }


class DirectStyle(nn.Module):
    """Per-vertex free parameters with the same output squashing (no network)."""

    def __init__(self, num_vertices: int, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.num_vertices = num_vertices
        self.raw_colors = nn.Parameter(torch.zeros(num_vertices, 3, dtype=dtype))
        self.raw_displacements = nn.Parameter(torch.zeros(num_vertices, dtype=dtype))

    def forward(self, points: torch.Tensor) -> StyleOutput:
        if points.shape[0] != self.num_vertices:
            raise DimensionError(f"direct style holds {self.num_vertices} vertices, got {points.shape[0]}")
        return StyleOutput(
            0.5 + _squash(self.raw_colors) / 2,
            MAX_DISPLACEMENT * _squash(self.raw_displacements),
        )

    evaluate = forward

    def parameter_partition(self) -> tuple[list[nn.Parameter], list[nn.Parameter]]:
        return [self.raw_displacements], [self.raw_colors]

    def config_dict(self) -> dict:
        return {"kind": "direct", "num_vertices": self.num_vertices}


def evaluate(field: nn.Module, points: torch.Tensor) -> StyleOutput:
    return field(points)


def parameter_partition(field: nn.Module) -> tuple[list[nn.Parameter], list[nn.Parameter]]:
    """Split trainable weights into (geometry, color). The frequency matrix is a buffer and in neither."""
    return field.parameter_partition()


def field_from_config(conf: dict, dtype: torch.dtype = torch.float32) -> nn.Module:
    if conf["kind"] == "direct":
        return DirectStyle(conf["num_vertices"], dtype=dtype)
    enc = EncodingConfig(
        num_frequencies=conf["num_frequencies"],
        sigma=conf["sigma"],
        symmetry_axes=tuple(conf["symmetry_axes"]),
        seed=conf["seed"],
    )
    return StyleField(
        enc,
        width=conf["width"],
        trunk_depth=conf["trunk_depth"],
        branch_depth=conf["branch_depth"],
        use_encoding=conf["use_encoding"],
        dtype=dtype,
    )
