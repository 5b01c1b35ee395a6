"""Image/text embedders and style-target resolution.

``MockEmbedder`` is a deterministic, differentiable stand-in used for all
offline work: images are average-pooled to 16x16x3, text becomes a hashed
bag of words, and both go through the same fixed Gaussian projection to 512
dimensions. ``ClipEmbedder`` wraps a pretrained CLIP model through
``transformers`` and refuses to start without local weights.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np
import torch
import torch.nn.functional as F

from .errors import CapabilityError, SimilarityError
from .mesh import Mesh

EMBED_DIM = 512
POOL = 16
FEATURE_DIM = POOL * POOL * 3
_TOKEN = re.compile(r"[a-z0-9]+")


def cosine_sim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """a.b / (|a| |b|); raises for a zero vector."""
    na, nb = a.norm(), b.norm()
    if float(na.detach()) == 0.0 or float(nb.detach()) == 0.0:
        raise SimilarityError("cosine similarity is undefined for a zero vector")
    return (a * b.to(a.dtype)).sum() / (na * nb.to(a.dtype))


class Embedder:
    """Maps images (N, H, W, 3), already normalized, and strings to R^512."""

    name = "abstract"

    def capabilities(self) -> dict:
        return {"name": self.name, "available": True, "differentiable": True}

    def embed_image(self, images: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def embed_text(self, text: str) -> torch.Tensor:
        raise NotImplementedError


class MockEmbedder(Embedder):
    name = "mock"

    def __init__(self, seed: int = 0, dtype: torch.dtype = torch.float32):
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._proj64 = torch.from_numpy(rng.standard_normal((EMBED_DIM, FEATURE_DIM)))
        self._cache = {torch.float64: self._proj64}

    def projection(self, dtype: torch.dtype) -> torch.Tensor:
        if dtype not in self._cache:
            self._cache[dtype] = self._proj64.to(dtype)
        return self._cache[dtype]

    def capabilities(self) -> dict:
        return {"name": f"mock(seed={self.seed})", "available": True, "differentiable": True}

    def embed_image(self, images: torch.Tensor) -> torch.Tensor:
        single = images.ndim == 3
        if single:
            images = images[None]
        pooled = F.adaptive_avg_pool2d(images.permute(0, 3, 1, 2), POOL).reshape(images.shape[0], -1)
        out = F.normalize(pooled @ self.projection(images.dtype).T, dim=-1)
        return out[0] if single else out

    def bag_of_words(self, text: str) -> torch.Tensor:
        tokens = _TOKEN.findall(text.lower())
        if not tokens:
            raise ValueError("text must contain at least one word")
        bow = torch.zeros(FEATURE_DIM, dtype=torch.float64)
        for tok in tokens:
            h = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8).digest(), "little")
            bow[h % FEATURE_DIM] += 1
        return bow

    def embed_text(self, text: str) -> torch.Tensor:
        if not text or not text.strip():
            raise ValueError("text must be non-empty")
        return F.normalize(self._proj64 @ self.bag_of_words(text), dim=0)


class ClipEmbedder(Embedder):
    """Pretrained CLIP via ``transformers``; weights must already be on disk."""

    def __init__(self, model: str = "openai/clip-vit-base-patch32", device: str = "cpu"):
        self.model_id = model
        self.name = f"clip:{model}"
        self.device = device
        try:
            from transformers import CLIPModel, CLIPTokenizer

            self.model = CLIPModel.from_pretrained(model, local_files_only=True).to(device).eval()
            self.tokenizer = CLIPTokenizer.from_pretrained(model, local_files_only=True)
        except Exception as exc:  # missing weights, missing package, bad device
            raise CapabilityError(f"CLIP model {model!r} unavailable: {exc}") from exc
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.input_size = self.model.config.vision_config.image_size

    def capabilities(self) -> dict:
        return {"name": self.name, "available": True, "differentiable": True, "device": self.device}

    def embed_image(self, images: torch.Tensor) -> torch.Tensor:
        single = images.ndim == 3
        if single:
            images = images[None]
        x = images.permute(0, 3, 1, 2).to(self.device, torch.float32)
        if x.shape[-1] != self.input_size or x.shape[-2] != self.input_size:
            x = F.interpolate(x, size=self.input_size, mode="bilinear", align_corners=False)
        out = self.model.get_image_features(pixel_values=x)
        out = getattr(out, "pooler_output", out)
        return out[0] if single else out

    def embed_text(self, text: str) -> torch.Tensor:
        if not text or not text.strip():
            raise ValueError("text must be non-empty")
        tok = self.tokenizer([text], padding=True, return_tensors="pt").to(self.device)
        with torch.no_grad():
            out = self.model.get_text_features(**tok)
        out = getattr(out, "pooler_output", out)
        return out[0]


def make_embedder(kind: str, seed: int = 0, model: str | None = None) -> Embedder:
    if kind == "mock":
        return MockEmbedder(seed)
    if kind in ("clip", "real"):
        return ClipEmbedder(model) if model else ClipEmbedder()
    raise ValueError(f"unknown embedder {kind!r}")


# ---------------------------------------------------------------------------
# targets


@dataclass(frozen=True)
class TextTarget:
    text: str


@dataclass(frozen=True, eq=False)
class ImageTarget:
    image: torch.Tensor  # (H, W, 3) in [0, 1]


@dataclass(frozen=True, eq=False)
class MeshTarget:
    mesh: Mesh


TargetPart = Union[TextTarget, ImageTarget, MeshTarget]


@dataclass
class StyleTarget:
    parts: list = field(default_factory=list)

    def __post_init__(self):
        if not self.parts:
            raise ValueError("a style target needs at least one part")

    @property
    def needs_views(self) -> bool:
        return any(isinstance(p, MeshTarget) for p in self.parts)

    def describe(self) -> list[str]:
        out = []
        for p in self.parts:
            if isinstance(p, TextTarget):
                out.append(f"text:{p.text}")
            elif isinstance(p, ImageTarget):
                out.append(f"image:{tuple(p.image.shape)}")
            else:
                out.append(f"mesh:{p.mesh.content_hash()[:12]}")
        return out


def resolve_target(target: StyleTarget, embedder: Embedder, views=None, render_cfg=None) -> list[torch.Tensor]:
    """One embedding per target part.

    Mesh parts embed as the mean over plain renders from ``views``.
    """
    from .augment import clip_normalize
    from .render import RenderConfig, render

    render_cfg = render_cfg or RenderConfig()
    out = []
    with torch.no_grad():
        for part in target.parts:
            if isinstance(part, TextTarget):
                out.append(embedder.embed_text(part.text))
            elif isinstance(part, ImageTarget):
                out.append(embedder.embed_image(clip_normalize(part.image)[None])[0])
            elif isinstance(part, MeshTarget):
                if not views:
                    raise ValueError("mesh targets need at least one view")
                m = part.mesh if part.mesh.vertex_colors is not None else part.mesh.with_colors([0.5] * 3)
                bg = render_cfg.fixed_background()
                imgs = torch.stack([render(m, v, render_cfg, background=bg) for v in views])
                out.append(embedder.embed_image(clip_normalize(imgs)).mean(dim=0))
            else:
                raise TypeError(f"unsupported target part {part!r}")
    return out
