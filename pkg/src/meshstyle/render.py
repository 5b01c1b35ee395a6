"""Soft rasterizer for vertex-colored meshes, written in plain PyTorch.

Each face touches only the pixels of its screen-space bounding box (grown by a
small margin). For every (face, pixel) pair we compute

* screen-space barycentrics, clamped and renormalized outside the triangle,
  which interpolate vertex color and depth;
* a soft coverage ``D = sigmoid(+-dist^2 / edge_softness)`` from the squared
  pixel distance to the face's silhouette edges (positive inside).

Only silhouette edges (open boundaries and front/back transitions) are soft.
Across an interior edge coverage passes from one face to its neighbour, so
the inside of a surface is fully opaque instead of showing a faint wireframe
of background between faces.

Coverage aggregates as ``alpha = 1 - prod(1 - D)``; the foreground color is
a depth softmax with weights ``D * exp(-z / depth_softness)``. Everything
except face culling is smooth, so gradients reach vertex positions (also
through silhouettes) and vertex colors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .field import StyleOutput
from .mesh import Mesh, apply_style
from .views import CameraPose

NEAR = 1e-2
# coverage logits beyond this are exactly 0 or 1 in double precision
SATURATION = 60.0
BACKGROUND_RANGE = (0.4, 0.8)


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 224
    width: int | None = None  # defaults to square
    background: tuple[float, float, float] | None = None  # None: random gray per render
    light_elevation: float = math.pi / 4  # camera-relative
    ambient: float = 0.4
    edge_softness: float = 0.2  # pixels^2
    depth_softness: float = 1e-2  # model units
    margin: float = 2.0  # pixels

    def __post_init__(self):
        if self.resolution < 32:
            raise ValueError("resolution must be >= 32")
        if not 0.0 <= self.ambient <= 1.0:
            raise ValueError("ambient must lie in [0, 1]")

    @property
    def size(self) -> tuple[int, int]:
        return self.resolution, (self.width or self.resolution)

    def draw_background(self, rng: np.random.Generator | None) -> tuple[float, float, float]:
        if self.background is not None:
            return tuple(self.background)
        if rng is None:
            return self.fixed_background()
        g = float(rng.uniform(*BACKGROUND_RANGE))
        return (g, g, g)

    def fixed_background(self) -> tuple[float, float, float]:
        if self.background is not None:
            return tuple(self.background)
        g = sum(BACKGROUND_RANGE) / 2
        return (g, g, g)


def _cross2(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _segment_dist2(p: torch.Tensor, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    ab = b - a
    t = ((p - a) * ab).sum(-1) / (ab * ab).sum(-1).clamp_min(1e-20)
    t = t.clamp(0.0, 1.0)
    d = p - (a + t[..., None] * ab)
    return (d * d).sum(-1)


def project(vertices: torch.Tensor, pose: CameraPose, size: tuple[int, int]):
    """World points -> (pixel xy, depth). Pixel (i, j) has its center at (j + 0.5, i + 0.5)."""
    H, W = size
    R = torch.as_tensor(pose.world_to_camera(), dtype=vertices.dtype)
    eye = torch.as_tensor(pose.eye(), dtype=vertices.dtype)
    cam = (vertices - eye) @ R.T
    depth = -cam[:, 2]
    f = 1.0 / math.tan(pose.fov_y / 2)
    safe = torch.where(depth.abs() > 1e-12, depth, torch.full_like(depth, 1e-12))
    ndc_x = f * cam[:, 0] / safe * (H / W)
    ndc_y = f * cam[:, 1] / safe
    xy = torch.stack([(ndc_x + 1) * W / 2, (1 - ndc_y) * H / 2], dim=-1)
    return xy, depth


def _silhouette_edges(faces: torch.Tensor, sign: torch.Tensor, n_vertices: int) -> torch.Tensor:
    """(m, 3) flags; column k is the edge opposite vertex k.

    An edge is interior when exactly two faces share it and both face the
    same way on screen. Everything else counts as silhouette.
    """
    e = faces[:, [[1, 2], [2, 0], [0, 1]]]
    key = e.min(dim=-1).values * n_vertices + e.max(dim=-1).values
    _, inv, counts = torch.unique(key.reshape(-1), return_inverse=True, return_counts=True)
    facing = torch.zeros(len(counts), dtype=sign.dtype).index_add(0, inv, sign.repeat_interleave(3))
    interior = (counts == 2) & (facing.abs() == 2)
    return ~interior[inv].reshape(-1, 3)


def _pairs(xy: torch.Tensor, size: tuple[int, int], margin: float):
    """Enumerate (face, pixel) pairs within each face's padded bounding box."""
    H, W = size
    lo = xy.min(dim=1).values
    hi = xy.max(dim=1).values
    x0 = torch.floor(lo[:, 0] - margin - 0.5).clamp(0, W - 1).long()
    x1 = torch.ceil(hi[:, 0] + margin - 0.5).clamp(-1, W - 1).long()
    y0 = torch.floor(lo[:, 1] - margin - 0.5).clamp(0, H - 1).long()
    y1 = torch.ceil(hi[:, 1] + margin - 0.5).clamp(-1, H - 1).long()
    # boxes entirely off-screen
    off = (hi[:, 0] + margin < 0) | (lo[:, 0] - margin > W) | (hi[:, 1] + margin < 0) | (lo[:, 1] - margin > H)
    cx = (x1 - x0 + 1).clamp_min(0)
    cy = (y1 - y0 + 1).clamp_min(0)
    cx = torch.where(off, torch.zeros_like(cx), cx)
    counts = cx * cy
    face = torch.repeat_interleave(torch.arange(len(counts)), counts)
    start = torch.cumsum(counts, 0) - counts
    local = torch.arange(int(counts.sum())) - start[face]
    px = x0[face] + local % cx[face]
    py = y0[face] + local // cx[face]
    return face, px, py


def render(
    mesh: Mesh,
    pose: CameraPose,
    cfg: RenderConfig = RenderConfig(),
    background=None,
    return_alpha: bool = False,
):
    """Render a colored mesh to an (H, W, 3) image in [0, 1].

    Faces are double-sided. Shading is Lambertian from a camera-relative
    directional light plus ambient. ``background`` overrides ``cfg.background``.
    Faces with any vertex behind the near plane are dropped.
    """
    H, W = cfg.size
    dtype = mesh.dtype
    bg = torch.as_tensor(background if background is not None else cfg.fixed_background(), dtype=dtype)
    colors = mesh.colors_or_gray()

    xy, depth = project(mesh.vertices, pose, (H, W))
    tri_xy = xy[mesh.faces]
    tri_z = depth[mesh.faces]
    area = _cross2(tri_xy[:, 1] - tri_xy[:, 0], tri_xy[:, 2] - tri_xy[:, 0])
    keep = (tri_z.detach().min(dim=1).values > NEAR) & (area.detach().abs() > 1e-10)
    fidx = torch.nonzero(keep).squeeze(1)
    sil = _silhouette_edges(mesh.faces, torch.where(keep, torch.sign(area.detach()), 0).long(), mesh.num_vertices)

    image = bg.expand(H, W, 3).clone()
    alpha = torch.zeros(H, W, dtype=dtype)
    if fidx.numel() == 0:
        return (image, alpha) if return_alpha else image

    faces = mesh.faces[fidx]
    tri_xy, tri_z, area, sil = tri_xy[fidx], tri_z[fidx], area[fidx], sil[fidx]

    # flat Lambertian shading, normals flipped toward the camera
    tri_w = mesh.vertices[faces]
    n = torch.linalg.cross(tri_w[:, 1] - tri_w[:, 0], tri_w[:, 2] - tri_w[:, 0], dim=-1)
    n = n / n.norm(dim=-1, keepdim=True).clamp_min(1e-20)
    eye = torch.as_tensor(pose.eye(), dtype=dtype)
    facing = torch.sign(((eye - tri_w.mean(dim=1)) * n).sum(-1)).detach()
    n = n * torch.where(facing == 0, torch.ones_like(facing), facing)[:, None]
    R = torch.as_tensor(pose.world_to_camera(), dtype=dtype)
    light = R.T @ torch.tensor([0.0, math.sin(cfg.light_elevation), math.cos(cfg.light_elevation)], dtype=dtype)
    shade = cfg.ambient + (1 - cfg.ambient) * torch.relu(n @ light)

    face, px, py = _pairs(tri_xy.detach(), (H, W), cfg.margin)
    if face.numel() == 0:
        return (image, alpha) if return_alpha else image
    p = torch.stack([px, py], dim=-1).to(dtype) + 0.5
    a, b, c = tri_xy[face, 0], tri_xy[face, 1], tri_xy[face, 2]
    A = area[face]
    l0 = _cross2(b - p, c - p) / A
    l1 = _cross2(c - p, a - p) / A
    l2 = _cross2(a - p, b - p) / A
    bary = torch.stack([l0, l1, l2], dim=-1)
    inside = (bary.detach() >= 0).all(dim=-1)

    # distances to the edges opposite vertex 0, 1, 2
    d_edge = torch.stack([_segment_dist2(p, b, c), _segment_dist2(p, c, a), _segment_dist2(p, a, b)], dim=-1)
    fsil = sil[face]
    d_sil = torch.where(fsil, d_edge, torch.full_like(d_edge, math.inf)).min(dim=-1).values
    # outside across an interior edge: the neighbouring face owns this pixel
    handed_over = ((bary.detach() < 0) & ~fsil).any(dim=-1)
    s_in = torch.clamp(d_sil / cfg.edge_softness, max=SATURATION)
    s_out = torch.where(handed_over, -SATURATION, -d_edge.min(dim=-1).values / cfg.edge_softness)
    s = torch.where(inside, s_in, s_out.clamp(min=-SATURATION))
    log_uncovered = -F.softplus(s)

    bc = bary.clamp_min(0)
    bc = bc / bc.sum(-1, keepdim=True).clamp_min(1e-20)
    z = (bc * tri_z[face]).sum(-1)
    col = (bc[..., None] * colors[faces[face]]).sum(1) * shade[face, None]

    pix = py * W + px
    HW = H * W
    log_bg = torch.zeros(HW, dtype=dtype).index_add(0, pix, log_uncovered)
    # depth softmax in log space, shifted by the per-pixel max so the largest weight is 1
    logw = F.logsigmoid(s) - z / cfg.depth_softness
    shift = torch.full((HW,), -math.inf, dtype=dtype).scatter_reduce(0, pix, logw.detach(), "amax")
    w = torch.exp(logw - shift[pix])
    den = torch.zeros(HW, dtype=dtype).index_add(0, pix, w)
    num = torch.zeros(HW, 3, dtype=dtype).index_add(0, pix, w[:, None] * col)
    has = den > 0
    fg = torch.where(has[:, None], num / torch.where(has, den, torch.ones_like(den))[:, None], torch.zeros_like(num))

    a_flat = 1 - torch.exp(log_bg)
    out = a_flat[:, None] * fg + (1 - a_flat[:, None]) * bg
    image = out.reshape(H, W, 3)
    alpha = a_flat.reshape(H, W)
    return (image, alpha) if return_alpha else image


def render_pair(content: Mesh, style: StyleOutput, pose: CameraPose, cfg: RenderConfig = RenderConfig(), rng=None):
    """Render the stylized mesh and its gray, displacement-only twin with one background draw."""
    bg = cfg.draw_background(rng)
    full = render(apply_style(content, style, colored=True), pose, cfg, background=bg)
    displ = render(apply_style(content, style, colored=False), pose, cfg, background=bg)
    return full, displ


def save_png(image: torch.Tensor, path) -> None:
    from PIL import Image

    arr = (image.detach().clamp(0, 1).to(torch.float64).numpy() * 255).round().astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path)


def load_image(path, resolution: int | None = None) -> torch.Tensor:
    """PNG/JPEG -> (H, W, 3) float tensor in [0, 1], optionally resized square."""
    from PIL import Image

    img = Image.open(path).convert("RGB")
    if resolution is not None:
        img = img.resize((resolution, resolution), Image.BILINEAR)
    return torch.from_numpy(np.asarray(img, dtype=np.float32) / 255.0)
