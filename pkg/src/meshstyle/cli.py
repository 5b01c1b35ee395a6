"""Command-line entry points.

Exit codes: 0 success, 2 usage, 3 capability (embedder unavailable),
4 runtime / numerics / consistency. Artifact paths go to stdout, logs to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentConfig
from .embedding import ImageTarget, MeshTarget, StyleTarget, TextTarget, make_embedder, resolve_target
from .errors import CapabilityError, ConsistencyError, MeshFormatError, NumericsError
from .field import EncodingConfig, StyleOutput
from .mesh import apply_style, load_mesh, morph_styles, normalize_to_unit_box, subdivide_barycentric, write_mesh
from .objective import score_stylization
from .render import RenderConfig, load_image, render, save_png
from .trainer import RunManifest, TrainConfig, export_results, load_checkpoint, train
from .views import CameraPose, ViewSamplerConfig, anchor_scores, sample_views

log = logging.getLogger("meshstyle")

EXIT_OK, EXIT_USAGE, EXIT_CAPABILITY, EXIT_RUNTIME = 0, 2, 3, 4


class UsageError(Exception):
    pass


# key -> (type, default). Flags with the same name (dashes for underscores) override file values.
SETTINGS = {
    "lr": (float, 5e-4),
    "lr_decay": (float, 0.9),
    "lr_step": (int, 100),
    "iterations": (int, 1500),
    "seed": (int, 0),
    "checkpoint_every": (int, 100),
    "snapshot_every": (int, 0),
    "n_theta": (int, 5),
    "jitter_sd": (float, math.pi / 4),
    "anchor_grid_count": (int, 100),
    "num_frequencies": (int, 128),
    "sigma": (float, 5.0),
    "symmetry": (str, ""),
    "n_aug": (int, 1),
    "crop_area_fraction": (float, 0.10),
    "perspective_distortion": (float, 0.5),
    "resolution": (int, 224),
    "ambient": (float, 0.4),
    "embedder": (str, "mock"),
    "clip_model": (str, "openai/clip-vit-base-patch32"),
    "subdivide": (int, 0),
    "dtype": (str, "float32"),
    "no_ffn": (bool, False),
    "no_aug": (bool, False),
    "no_crop": (bool, False),
    "no_displ_term": (bool, False),
    "direct_optim": (bool, False),
}
ALIASES = {"iters": "iterations", "sigma_b": "sigma", "n_views": "n_theta"}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if key not in SETTINGS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        typ = SETTINGS[key][0]
        try:
            out[key] = _parse_bool(value) if typ is bool else typ(value)
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = {k: d for k, (_, d) in SETTINGS.items()}
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for key in SETTINGS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def build_configs(s: dict):
    axes = tuple(a for a in s["symmetry"].replace(",", "").lower() if a.strip())
    train_cfg = TrainConfig(
        lr=s["lr"],
        lr_decay=s["lr_decay"],
        lr_step=s["lr_step"],
        iterations=s["iterations"],
        seed=s["seed"],
        checkpoint_every=s["checkpoint_every"],
        snapshot_every=s["snapshot_every"],
        use_displ_term=not s["no_displ_term"],
        direct=s["direct_optim"],
        use_encoding=not s["no_ffn"],
        dtype=s["dtype"],
    )
    enc = EncodingConfig(num_frequencies=s["num_frequencies"], sigma=s["sigma"], symmetry_axes=axes, seed=s["seed"])
    views = ViewSamplerConfig(n_theta=s["n_theta"], jitter_sd=s["jitter_sd"], anchor_grid_count=s["anchor_grid_count"], seed=s["seed"])
    aug = AugmentConfig(
        n_aug=s["n_aug"],
        crop_area_fraction=s["crop_area_fraction"],
        perspective_distortion=s["perspective_distortion"],
        enabled=not s["no_aug"],
        crop=not s["no_crop"],
    )
    rcfg = RenderConfig(resolution=s["resolution"], ambient=s["ambient"])
    return train_cfg, enc, views, aug, rcfg


def prepare_mesh(path, subdivide: int = 0, dtype: torch.dtype = torch.float32):
    mesh = normalize_to_unit_box(load_mesh(path))
    for _ in range(subdivide):
        mesh = subdivide_barycentric(mesh)
    return mesh.to(dtype)


def build_target(args, resolution: int) -> StyleTarget:
    parts = [TextTarget(p) for p in (args.prompt or [])]
    parts += [ImageTarget(load_image(p, resolution)) for p in (args.target_image or [])]
    parts += [MeshTarget(normalize_to_unit_box(load_mesh(p))) for p in (args.target_mesh or [])]
    if not parts:
        raise UsageError("need at least one of --prompt, --target-image, --target-mesh")
    return StyleTarget(parts)


# ---------------------------------------------------------------------------
# commands


def cmd_stylize(args) -> int:
    s = resolve_settings(args)
    train_cfg, enc, view_cfg, aug, rcfg = build_configs(s)
    target = build_target(args, rcfg.resolution)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # written before the embedder touches weights or devices
    RunManifest(config={"settings": s, "argv": sys.argv[1:]}, mesh_hash="", embedder={"requested": s["embedder"]}, targets=[]).write(
        out / "manifest.json"
    )
    mesh = prepare_mesh(args.mesh, s["subdivide"], train_cfg.torch_dtype)
    embedder = make_embedder(s["embedder"], seed=s["seed"], model=s["clip_model"])
    field, manifest = train(mesh, target, embedder, train_cfg, enc, view_cfg, aug, rcfg, out_dir=out)
    manifest.config["settings"] = s
    anchor = CameraPose.from_dict(manifest.anchor)
    paths = export_results(field, mesh, out, anchor=anchor, render_cfg=rcfg, manifest=manifest)
    for p in paths.values():
        print(p)
    return EXIT_OK


def cmd_select_anchor(args) -> int:
    s = resolve_settings(args)
    _, _, view_cfg, _, rcfg = build_configs(s)
    target = build_target(args, rcfg.resolution)
    mesh = prepare_mesh(args.mesh, s["subdivide"])
    embedder = make_embedder(s["embedder"], seed=s["seed"], model=s["clip_model"])
    from .views import anchor_grid

    grid = anchor_grid(view_cfg.anchor_grid_count, look_at=tuple(float(c) for c in mesh.centroid()))
    targets = resolve_target(target, embedder, grid, rcfg)
    poses, scores = anchor_scores(mesh, targets, embedder, view_cfg, rcfg)
    best = int(np.argmax(scores))
    result = {"index": best, "score": float(scores[best]), "pose": poses[best].to_dict()}
    if args.out:
        Path(args.out).write_text(
            json.dumps({**result, "grid": [{"pose": p.to_dict(), "score": float(v)} for p, v in zip(poses, scores)]}, indent=2)
        )
        print(args.out)
    print(json.dumps(result))
    return EXIT_OK


def _field_and_mesh(ckpt_path, mesh_path, subdivide):
    field, ckpt = load_checkpoint(ckpt_path)
    dtype = getattr(torch, ckpt["dtype"])
    mesh = prepare_mesh(mesh_path, subdivide, dtype)
    if ckpt["mesh_hash"] and ckpt["mesh_hash"] != mesh.content_hash():
        raise ConsistencyError(f"{ckpt_path} was trained on a different mesh")
    return field, ckpt, mesh


def cmd_morph(args) -> int:
    if args.frames < 2:
        raise UsageError("--frames must be >= 2")
    fa, ca, mesh = _field_and_mesh(args.start, args.mesh, args.subdivide)
    fb, cb = load_checkpoint(args.end)
    if ca["mesh_hash"] != cb["mesh_hash"]:
        raise ConsistencyError("checkpoints were trained on different meshes")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        sa = fa(mesh.vertices)
        sb = fb(mesh.vertices.to(getattr(torch, cb["dtype"])))
        sb = StyleOutput(sb.colors.to(mesh.dtype), sb.displacements.to(mesh.dtype))
        for k in range(args.frames):
            alpha = k / (args.frames - 1)
            styled = apply_style(mesh, morph_styles(sa, sb, alpha), colored=True)
            print(write_mesh(styled, out / f"morph_{k:03d}.obj"))
            print(write_mesh(styled, out / f"morph_{k:03d}.ply"))
    return EXIT_OK


def cmd_subdivide(args) -> int:
    mesh = load_mesh(args.mesh)
    for _ in range(args.levels):
        mesh = subdivide_barycentric(mesh)
    print(write_mesh(mesh, args.out))
    return EXIT_OK


def cmd_score(args) -> int:
    s = resolve_settings(args)
    _, _, view_cfg, _, rcfg = build_configs(s)
    target = build_target(args, rcfg.resolution)
    field, _, mesh = _field_and_mesh(args.checkpoint, args.mesh, s["subdivide"])
    embedder = make_embedder(s["embedder"], seed=s["seed"], model=s["clip_model"])
    look = tuple(float(c) for c in mesh.centroid())
    anchor = CameraPose(args.azimuth, args.elevation, look_at=look)
    views = sample_views(anchor, view_cfg, np.random.default_rng(s["seed"]))
    targets = resolve_target(target, embedder, views, rcfg)
    print(json.dumps({"score": score_stylization(field, mesh, targets, views, embedder, rcfg)}))
    return EXIT_OK


def cmd_export_snapshots(args) -> int:
    field, _, mesh = _field_and_mesh(args.checkpoint, args.mesh, args.subdivide)
    rcfg = RenderConfig(resolution=args.height, width=args.width, background=(1.0, 1.0, 1.0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    look = tuple(float(c) for c in mesh.centroid())
    with torch.no_grad():
        styled = apply_style(mesh, field(mesh.vertices), colored=True)
        gray = apply_style(mesh, field(mesh.vertices), colored=False)
        for i in range(args.count):
            pose = CameraPose(args.azimuth + 2 * math.pi * i / args.count, args.elevation, look_at=look)
            for name, m in (("full", styled), ("displ", gray)):
                p = out / f"{name}_{i:02d}.png"
                save_png(render(m, pose, rcfg), p)
                print(p)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_settings(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value settings file; flags win over file values")
    for key, (typ, _) in SETTINGS.items():
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            p.add_argument(flag, dest=key, action="store_const", const=True, default=None)
        else:
            p.add_argument(flag, dest=key, type=typ, default=None)
    p.add_argument("--iters", dest="iterations", type=int, default=None)


def _add_targets(p: argparse.ArgumentParser) -> None:
    p.add_argument("--prompt", action="append", help="target text (repeatable)")
    p.add_argument("--target-image", action="append", help="target image path (repeatable)")
    p.add_argument("--target-mesh", action="append", help="target mesh path (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshstyle", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stylize", help="optimize a style field for a mesh and target")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    _add_targets(p)
    _add_settings(p)
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("select-anchor", help="score a sphere of views and report the best")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out")
    _add_targets(p)
    _add_settings(p)
    p.set_defaults(func=cmd_select_anchor)

    p = sub.add_parser("morph", help="interpolate two stylizations of one mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--start", required=True, help="checkpoint at alpha = 0")
    p.add_argument("--end", required=True, help="checkpoint at alpha = 1")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--subdivide", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_morph)

    p = sub.add_parser("subdivide", help="insert face barycenters")
    p.add_argument("--mesh", required=True)
    p.add_argument("--levels", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subdivide)

    p = sub.add_parser("score", help="similarity of a stylization to a target")
    p.add_argument("--mesh", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--azimuth", type=float, default=0.0)
    p.add_argument("--elevation", type=float, default=0.0)
    _add_targets(p)
    _add_settings(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("export-snapshots", help="render a checkpoint around the mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subdivide", type=int, default=0)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--azimuth", type=float, default=0.0)
    p.add_argument("--elevation", type=float, default=0.0)
    p.set_defaults(func=cmd_export_snapshots)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CapabilityError as exc:
        print(f"capability error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except (NumericsError, ConsistencyError, MeshFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
