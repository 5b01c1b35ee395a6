"""Camera poses, anchor-view search over a Fibonacci sphere, and Gaussian view jitter."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch

# longest-side-1 box: bounding sphere radius is half the box diagonal
UNIT_BOX_HALF_DIAGONAL = math.sqrt(3) / 2
DEFAULT_DISTANCE = 2.2 * UNIT_BOX_HALF_DIAGONAL
DEFAULT_FOV = math.radians(60)
ELEVATION_MARGIN = 1e-3


@dataclass(frozen=True)
class CameraPose:
    azimuth: float
    elevation: float
    distance: float = DEFAULT_DISTANCE
    fov_y: float = DEFAULT_FOV
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("distance must be positive")
        if not -math.pi / 2 < self.elevation < math.pi / 2:
            raise ValueError("elevation must lie strictly inside (-pi/2, pi/2)")

    def direction(self) -> np.ndarray:
        """Unit vector from look_at toward the eye. Azimuth 0, elevation 0 is +Z; +Y is up."""
        ce = math.cos(self.elevation)
        return np.array([ce * math.sin(self.azimuth), math.sin(self.elevation), ce * math.cos(self.azimuth)])

    def eye(self) -> np.ndarray:
        return np.asarray(self.look_at) + self.distance * self.direction()

    def world_to_camera(self) -> np.ndarray:
        """Rotation whose rows are the camera right, up and backward axes in world space."""
        back = self.direction()
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(up, back)
        right /= np.linalg.norm(right)
        return np.stack([right, np.cross(back, right), back])

    def to_dict(self) -> dict:
        return {
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "distance": self.distance,
            "fov_y": self.fov_y,
            "look_at": list(self.look_at),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(d["azimuth"], d["elevation"], d["distance"], d["fov_y"], tuple(d["look_at"]))


@dataclass(frozen=True)
class ViewSamplerConfig:
    n_theta: int = 5
    jitter_sd: float = math.pi / 4
    anchor_grid_count: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_theta < 1:
            raise ValueError("n_theta must be >= 1")
        if not self.jitter_sd > 0:
            raise ValueError("jitter_sd must be positive")
        if self.anchor_grid_count < 1:
            raise ValueError("anchor_grid_count must be >= 1")


def fibonacci_directions(count: int) -> np.ndarray:
    """Near-uniform unit vectors; latitudes use cell midpoints so no sample sits on a pole."""
    i = np.arange(count)
    y = 1 - (2 * i + 1) / count
    r = np.sqrt(1 - y * y)
    theta = math.pi * (3 - math.sqrt(5)) * i
    return np.stack([r * np.sin(theta), y, r * np.cos(theta)], axis=1)


def anchor_grid(count: int, distance: float = DEFAULT_DISTANCE, fov_y: float = DEFAULT_FOV, look_at=(0.0, 0.0, 0.0)):
    poses = []
    for x, y, z in fibonacci_directions(count):
        el = math.asin(float(np.clip(y, -1, 1)))
        poses.append(CameraPose(math.atan2(x, z), el, distance, fov_y, tuple(float(c) for c in look_at)))
    return poses


def anchor_scores(mesh, target_embeddings, embedder, cfg: ViewSamplerConfig, render_cfg=None):
    """Render the plain mesh from every grid pose and score it against the targets.

    Returns ``(poses, scores)`` where each score is the mean cosine similarity over
    target parts.
    """
    from .augment import clip_normalize
    from .embedding import cosine_sim
    from .render import RenderConfig, render

    render_cfg = render_cfg or RenderConfig()
    look_at = tuple(float(c) for c in mesh.centroid())
    poses = anchor_grid(cfg.anchor_grid_count, look_at=look_at)
    plain = mesh if mesh.vertex_colors is not None else mesh.with_colors([0.5, 0.5, 0.5])
    bg = render_cfg.fixed_background()
    scores = []
    with torch.no_grad():
        for pose in poses:
            img = render(plain, pose, render_cfg, background=bg)
            emb = embedder.embed_image(clip_normalize(img)[None])[0]
            scores.append(float(np.mean([float(cosine_sim(emb, t)) for t in target_embeddings])))
    return poses, np.asarray(scores)


def select_anchor(mesh, target_embeddings, embedder, cfg: ViewSamplerConfig = ViewSamplerConfig(), render_cfg=None) -> CameraPose:
    poses, scores = anchor_scores(mesh, target_embeddings, embedder, cfg, render_cfg)
    # argmax returns the first maximum: ties go to the lowest grid index
    return poses[int(np.argmax(scores))]


def sample_views(anchor: CameraPose, cfg: ViewSamplerConfig, rng: np.random.Generator) -> list[CameraPose]:
    """Jitter azimuth and elevation independently with N(0, jitter_sd^2)."""
    offsets = rng.normal(0.0, cfg.jitter_sd, size=(cfg.n_theta, 2))
    lim = math.pi / 2 - ELEVATION_MARGIN
    return [
        replace(anchor, azimuth=anchor.azimuth + float(da), elevation=float(np.clip(anchor.elevation + de, -lim, lim)))
        for da, de in offsets
    ]
