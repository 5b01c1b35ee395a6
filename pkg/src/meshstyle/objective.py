"""Similarity objective over rendered, augmented, view-averaged embeddings."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from .augment import AugmentConfig, clip_normalize, draw_global, draw_local, warp
from .embedding import Embedder, cosine_sim
from .mesh import Mesh
from .render import RenderConfig, render, render_pair

TERMS = ("sim_full", "sim_displ", "sim_local")


@dataclass
class LossBreakdown:
    """Per-part similarities for each term; tensors stay attached to the graph.

    ``total`` is the sum over parts and terms (the quantity to maximize).
    """

    sim_full: torch.Tensor
    sim_displ: torch.Tensor
    sim_local: torch.Tensor
    total: torch.Tensor

    def term(self, name: str) -> torch.Tensor:
        return getattr(self, name).sum()

    def mean_similarity(self) -> float:
        used = [getattr(self, t) for t in TERMS if getattr(self, t).numel()]
        return float(torch.cat([u.detach().reshape(-1) for u in used]).mean())

    def record(self, iteration: int | None = None) -> dict:
        rec = {} if iteration is None else {"iteration": iteration}
        for t in TERMS:
            rec[t] = float(getattr(self, t).detach().sum())
        rec["total"] = float(self.total.detach())
        return rec


def _sims(S: torch.Tensor, targets: list[torch.Tensor]) -> torch.Tensor:
    return torch.stack([cosine_sim(S, t.to(S.dtype)) for t in targets])


def evaluate_loss(
    field,
    mesh: Mesh,
    targets: list[torch.Tensor],
    views,
    embedder: Embedder,
    aug_cfg: AugmentConfig = AugmentConfig(),
    render_cfg: RenderConfig = RenderConfig(),
    rng: np.random.Generator | None = None,
    use_displ_term: bool = True,
) -> LossBreakdown:
    """Render every view pair, augment, embed, average over views, compare.

    The gray displacement-only renders never see the color branch, so the
    ``sim_displ`` term carries no gradient into it. A local augmentation is
    drawn once per view and shared by the full and gray renders; each of the
    ``n_aug`` repetitions redraws everything except the renders. Results are
    averaged over repetitions.
    """
    if not views:
        raise ValueError("need at least one view")
    rng = rng if rng is not None else np.random.default_rng(0)
    style = field(mesh.vertices.detach())
    fulls, displs = [], []
    for pose in views:
        full, displ = render_pair(mesh, style, pose, render_cfg, rng)
        fulls.append(full)
        displs.append(displ)
    fulls = torch.stack(fulls)
    displs = torch.stack(displs)
    size = fulls.shape[1]
    n = len(views)

    acc = {t: 0 for t in TERMS}
    for _ in range(aug_cfg.n_aug):
        g = [draw_global(size, aug_cfg, rng) for _ in range(n)]
        loc = [draw_local(size, aug_cfg, rng) for _ in range(n)]
        batch = [warp(fulls, g), warp(fulls, loc)]
        if use_displ_term:
            batch.append(warp(displs, loc))
        emb = embedder.embed_image(clip_normalize(torch.cat(batch), aug_cfg.mean, aug_cfg.std))
        emb = emb.reshape(len(batch), n, -1).mean(dim=1)
        acc["sim_full"] = acc["sim_full"] + _sims(emb[0], targets)
        acc["sim_local"] = acc["sim_local"] + _sims(emb[1], targets)
        if use_displ_term:
            acc["sim_displ"] = acc["sim_displ"] + _sims(emb[2], targets)

    out = {}
    for t in TERMS:
        if isinstance(acc[t], int):
            out[t] = torch.zeros(0, dtype=fulls.dtype)
        else:
            out[t] = acc[t] / aug_cfg.n_aug
    total = sum(out[t].sum() for t in TERMS)
    return LossBreakdown(out["sim_full"], out["sim_displ"], out["sim_local"], total)


def score_stylization(
    field,
    mesh: Mesh,
    targets: list[torch.Tensor],
    views,
    embedder: Embedder,
    render_cfg: RenderConfig = RenderConfig(),
) -> float:
    """Similarity of the view-averaged plain renders of the stylized mesh, mean over target parts.

    No augmentation and a fixed background, so the score is a deterministic
    function of the field, mesh and views.
    """
    from .mesh import apply_style

    with torch.no_grad():
        styled = apply_style(mesh, field(mesh.vertices), colored=True)
        bg = render_cfg.fixed_background()
        imgs = torch.stack([render(styled, v, render_cfg, background=bg) for v in views])
        S = embedder.embed_image(clip_normalize(imgs)).mean(dim=0)
        return float(_sims(S, targets).mean())


class LossLog:
    """Line-delimited JSON, one record per iteration."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
