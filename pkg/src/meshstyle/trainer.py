"""Optimization loop, checkpoints, run manifests and result export."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .augment import AugmentConfig
from .embedding import Embedder, StyleTarget, resolve_target
from .errors import ConsistencyError, NumericsError
from .field import DirectStyle, EncodingConfig, StyleField, field_from_config
from .mesh import Mesh, apply_style, write_mesh
from .objective import LossLog, evaluate_loss
from .render import RenderConfig, render, save_png
from .views import CameraPose, ViewSamplerConfig, anchor_grid, anchor_scores, sample_views

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "meshstyle-checkpoint/1"
# azimuth offsets for exported snapshots, around the anchor
SNAPSHOT_OFFSETS = (0.0, math.pi / 2, math.pi, -math.pi / 2)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    lr_decay: float = 0.9
    lr_step: int = 100
    iterations: int = 1500
    seed: int = 0
    checkpoint_every: int = 100
    snapshot_every: int = 0  # 0 disables periodic snapshots
    use_displ_term: bool = True
    direct: bool = False  # optimize per-vertex values instead of a network
    use_encoding: bool = True
    dtype: str = "float32"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)


def learning_rate(iteration: int, cfg: TrainConfig = TrainConfig()) -> float:
    return cfg.lr * cfg.lr_decay ** (iteration // cfg.lr_step)


@dataclass
class RunManifest:
    config: dict
    mesh_hash: str
    embedder: dict
    targets: list
    anchor: dict | None = None
    anchor_grid: list = dc_field(default_factory=list)
    loss_log: str | None = None
    checkpoints: list = dc_field(default_factory=list)
    best_similarity: list = dc_field(default_factory=list)  # (iteration, best-so-far mean similarity)
    wall_clock_s: float = 0.0
    status: str = "started"
    notes: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path


def build_field(mesh: Mesh, enc: EncodingConfig, cfg: TrainConfig) -> nn.Module:
    if cfg.direct:
        return DirectStyle(mesh.num_vertices, dtype=cfg.torch_dtype)
    return StyleField(enc, use_encoding=cfg.use_encoding, dtype=cfg.torch_dtype)


def save_checkpoint(field: nn.Module, path, mesh_hash: str | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "field": field.config_dict(),
            "dtype": str(next(iter(field.state_dict().values())).dtype).replace("torch.", ""),
            "state_dict": field.state_dict(),
            "mesh_hash": mesh_hash,
            "extra": extra or {},
        },
        path,
    )
    return path


def load_checkpoint(path, mesh: Mesh | None = None) -> tuple[nn.Module, dict]:
    """Rebuild a field from its archive. With ``mesh``, its hash must match the one recorded."""
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ConsistencyError(f"{path}: not a style-field checkpoint")
    if mesh is not None and ckpt["mesh_hash"] and ckpt["mesh_hash"] != mesh.content_hash():
        raise ConsistencyError(f"{path}: checkpoint belongs to a different mesh")
    f = field_from_config(ckpt["field"], dtype=getattr(torch, ckpt["dtype"]))
    f.load_state_dict(ckpt["state_dict"])
    return f, ckpt


def export_results(
    field: nn.Module,
    mesh: Mesh,
    out_dir,
    anchor: CameraPose | None = None,
    render_cfg: RenderConfig = RenderConfig(),
    manifest: RunManifest | None = None,
    snapshots: bool = True,
) -> dict[str, Path]:
    """Write stylized and displacement-only meshes, checkpoint, manifest and snapshot PNGs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        style = field(mesh.vertices)
        styled = apply_style(mesh, style, colored=True)
        gray = apply_style(mesh, style, colored=False)
    paths = {
        "stylized_obj": write_mesh(styled, out / "stylized.obj"),
        "stylized_ply": write_mesh(styled, out / "stylized.ply"),
        "displaced_obj": write_mesh(gray, out / "displaced_only.obj"),
        "checkpoint": save_checkpoint(field, out / "checkpoints" / "final.pt", mesh.content_hash()),
    }
    if snapshots:
        anchor = anchor or CameraPose(0.0, 0.0, look_at=tuple(float(c) for c in mesh.centroid()))
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for i, off in enumerate(SNAPSHOT_OFFSETS):
            pose = CameraPose(anchor.azimuth + off, anchor.elevation, anchor.distance, anchor.fov_y, anchor.look_at)
            p = snap_dir / f"final_{i}.png"
            with torch.no_grad():
                save_png(render(styled, pose, render_cfg), p)
            paths[f"snapshot_{i}"] = p
    if manifest is not None:
        paths["manifest"] = manifest.write(out / "manifest.json")
    return paths


def train(
    mesh: Mesh,
    target: StyleTarget,
    embedder: Embedder,
    cfg: TrainConfig = TrainConfig(),
    enc_cfg: EncodingConfig = EncodingConfig(),
    view_cfg: ViewSamplerConfig = ViewSamplerConfig(),
    aug_cfg: AugmentConfig = AugmentConfig(),
    render_cfg: RenderConfig = RenderConfig(),
    out_dir=None,
    anchor: CameraPose | None = None,
    callback=None,
) -> tuple[nn.Module, RunManifest]:
    """Optimize a style field on a unit-box-normalized mesh.

    Picks the anchor view (unless given), then per iteration samples views,
    evaluates the similarity objective and takes an Adam step on its negative.
    ``callback(iteration, breakdown, field)`` runs after each step.
    """
    t0 = time.time()
    dtype = cfg.torch_dtype
    mesh = mesh.to(dtype)
    out = Path(out_dir) if out_dir is not None else None
    manifest = RunManifest(
        config={
            "train": asdict(cfg),
            "encoding": asdict(enc_cfg),
            "views": asdict(view_cfg),
            "augment": asdict(aug_cfg),
            "render": asdict(render_cfg),
        },
        mesh_hash=mesh.content_hash(),
        embedder=embedder.capabilities(),
        targets=target.describe(),
        notes={"local_augmentation": "one draw per view, shared by full and gray renders", "n_aug_reduction": "mean"},
    )
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "checkpoints").mkdir(exist_ok=True)
        manifest.write(out / "manifest.json")

    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)

    static_targets = None
    if not target.needs_views:
        static_targets = [t.to(dtype) for t in resolve_target(target, embedder)]

    if anchor is None:
        grid_targets = static_targets
        if grid_targets is None:
            look = tuple(float(c) for c in mesh.centroid())
            grid_targets = resolve_target(target, embedder, anchor_grid(view_cfg.anchor_grid_count, look_at=look), render_cfg)
        poses, scores = anchor_scores(mesh, grid_targets, embedder, view_cfg, render_cfg)
        best = int(np.argmax(scores))
        anchor = poses[best]
        manifest.anchor_grid = [{"pose": p.to_dict(), "score": float(s)} for p, s in zip(poses, scores)]
        log.info("anchor view %d (score %.4f)", best, scores[best])
    manifest.anchor = anchor.to_dict()

    field = build_field(mesh, enc_cfg, cfg)
    opt = torch.optim.Adam(field.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda i: cfg.lr_decay ** (i // cfg.lr_step))

    loss_log = None
    if out is not None:
        loss_log = LossLog(out / "loss.log")
        manifest.loss_log = "loss.log"
    best = -math.inf
    try:
        for it in range(cfg.iterations):
            views = sample_views(anchor, view_cfg, rng)
            targets = static_targets
            if targets is None:
                targets = [t.to(dtype) for t in resolve_target(target, embedder, views, render_cfg)]
            breakdown = evaluate_loss(
                field, mesh, targets, views, embedder, aug_cfg, render_cfg, rng, use_displ_term=cfg.use_displ_term
            )
            loss = -breakdown.total
            if not torch.isfinite(loss):
                if out is not None:
                    save_checkpoint(field, out / "checkpoints" / f"diverged_{it:05d}.pt", manifest.mesh_hash)
                raise NumericsError(f"non-finite loss at iteration {it}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()

            rec = breakdown.record(it)
            rec["lr"] = opt.param_groups[0]["lr"]
            rec["mean_similarity"] = breakdown.mean_similarity()
            best = max(best, rec["mean_similarity"])
            if loss_log is not None:
                loss_log.write(rec)
            if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                manifest.best_similarity.append((it + 1, best))
                if out is not None:
                    p = save_checkpoint(field, out / "checkpoints" / f"iter_{it + 1:05d}.pt", manifest.mesh_hash)
                    manifest.checkpoints.append(str(p.relative_to(out)))
            if out is not None and cfg.snapshot_every and (it + 1) % cfg.snapshot_every == 0:
                (out / "snapshots").mkdir(exist_ok=True)
                with torch.no_grad():
                    styled = apply_style(mesh, field(mesh.vertices), colored=True)
                    save_png(render(styled, anchor, render_cfg), out / "snapshots" / f"iter_{it + 1:05d}.png")
            if callback is not None:
                callback(it, breakdown, field)
        manifest.status = "finished"
    except Exception:
        manifest.status = "failed"
        raise
    finally:
        manifest.wall_clock_s = time.time() - t0
        if loss_log is not None:
            loss_log.close()
        if out is not None:
            manifest.write(out / "manifest.json")
    return field, manifest
