"""Triangle meshes: loading, normalization, subdivision, styling, export."""

from __future__ import annotations

import hashlib
import os
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import DimensionError, EmptyMeshError, MeshFormatError
from .field import StyleOutput

GRAY = 0.5


class DegenerateMeshWarning(UserWarning):
    pass


def vertex_normals(vertices: torch.Tensor, faces: torch.Tensor) -> torch.Tensor:
    """Area-weighted vertex normals. Vertices with no non-degenerate face get +Z."""
    tri = vertices[faces]
    fn = torch.linalg.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0], dim=-1)
    acc = torch.zeros_like(vertices).index_add(0, faces.reshape(-1), fn.repeat_interleave(3, dim=0))
    norm = acc.norm(dim=-1, keepdim=True)
    fallback = torch.zeros_like(acc)
    fallback[:, 2] = 1
    ok = norm > 1e-300
    return torch.where(ok, acc / torch.where(ok, norm, torch.ones_like(norm)), fallback)


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: torch.Tensor
    faces: torch.Tensor
    vertex_normals: torch.Tensor
    vertex_colors: torch.Tensor | None = None

    @classmethod
    def create(cls, vertices, faces, vertex_colors=None, dtype=None) -> "Mesh":
        v = torch.as_tensor(vertices)
        if dtype is not None:
            v = v.to(dtype)
        elif not v.is_floating_point():
            v = v.to(torch.float64)
        f = torch.as_tensor(faces, dtype=torch.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshFormatError(f"vertices must be (n, 3), got {tuple(v.shape)}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshFormatError(f"faces must be (m, 3), got {tuple(f.shape)}")
        if f.shape[0] == 0:
            raise EmptyMeshError("mesh has no faces")
        if int(f.min()) < 0 or int(f.max()) >= v.shape[0]:
            raise MeshFormatError(f"face index out of range [0, {v.shape[0]})")
        c = None
        if vertex_colors is not None:
            c = torch.as_tensor(vertex_colors).to(v.dtype)
            if c.shape != v.shape:
                raise DimensionError("vertex_colors must match vertices")
        return cls(v, f, vertex_normals(v, f), c)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def dtype(self) -> torch.dtype:
        return self.vertices.dtype

    def to(self, dtype: torch.dtype) -> "Mesh":
        c = None if self.vertex_colors is None else self.vertex_colors.to(dtype)
        return Mesh(self.vertices.to(dtype), self.faces, self.vertex_normals.to(dtype), c)

    def with_colors(self, colors) -> "Mesh":
        c = torch.as_tensor(colors, dtype=self.dtype).expand(self.num_vertices, 3)
        return Mesh(self.vertices, self.faces, self.vertex_normals, c.clone())

    def colors_or_gray(self) -> torch.Tensor:
        if self.vertex_colors is not None:
            return self.vertex_colors
        return torch.full_like(self.vertices, GRAY)

    def centroid(self) -> torch.Tensor:
        return self.vertices.detach().mean(dim=0)

    def face_areas(self) -> torch.Tensor:
        tri = self.vertices[self.faces]
        return 0.5 * torch.linalg.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0], dim=-1).norm(dim=-1)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.vertices.detach().to(torch.float64).contiguous().numpy().tobytes())
        h.update(self.faces.contiguous().numpy().tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class MeshStats:
    face_count: int
    vertex_count: int
    nonmanifold_edge_fraction: float
    nonmanifold_vertex_fraction: float
    boundary_edge_fraction: float


# ---------------------------------------------------------------------------
# I/O


def _parse_index(tok: str, n: int, lineno: int) -> int:
    try:
        i = int(tok.split("/")[0])
    except ValueError:
        raise MeshFormatError(f"line {lineno}: bad face index {tok!r}") from None
    if i < 0:
        i = n + i
    else:
        i -= 1
    if not 0 <= i < n:
        raise MeshFormatError(f"line {lineno}: face index {tok} out of range for {n} vertices")
    return i


def _load_obj(path: Path):
    verts, colors, polys = [], [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                try:
                    vals = [float(x) for x in parts[1:]]
                except ValueError:
                    raise MeshFormatError(f"line {lineno}: bad vertex") from None
                if len(vals) < 3:
                    raise MeshFormatError(f"line {lineno}: vertex needs 3 coordinates")
                verts.append(vals[:3])
                colors.append(vals[3:6] if len(vals) >= 6 else None)
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise MeshFormatError(f"line {lineno}: face needs at least 3 vertices")
                polys.append((lineno, parts[1:]))
    # indices may reference vertices declared later in the file
    n = len(verts)
    faces = []
    for lineno, toks in polys:
        idx = [_parse_index(t, n, lineno) for t in toks]
        faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
    vc = colors if colors and all(c is not None for c in colors) else None
    return verts, faces, vc


def _load_ply(path: Path):
    with open(path, "r") as fh:
        if fh.readline().strip() != "ply":
            raise MeshFormatError("missing ply magic")
        elements, current = [], None
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format" and parts[1] != "ascii":
                raise MeshFormatError("only ASCII PLY is supported")
            elif parts[0] == "element":
                current = [parts[1], int(parts[2]), []]
                elements.append(current)
            elif parts[0] == "property":
                current[2].append(parts[-1])
            elif parts[0] == "end_header":
                break
        body = [ln.split() for ln in fh if ln.strip()]
    verts, colors, faces, pos = [], [], [], 0
    for name, count, props in elements:
        rows, pos = body[pos : pos + count], pos + count
        if name == "vertex":
            col = {p: i for i, p in enumerate(props)}
            for r in rows:
                verts.append([float(r[col[a]]) for a in "xyz"])
                if all(k in col for k in ("red", "green", "blue")):
                    colors.append([float(r[col[k]]) / 255.0 for k in ("red", "green", "blue")])
        elif name == "face":
            n = len(verts)
            for r in rows:
                k = int(r[0])
                idx = [int(x) for x in r[1 : 1 + k]]
                if any(not 0 <= i < n for i in idx):
                    raise MeshFormatError(f"face index out of range for {n} vertices")
                faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, k - 1))
    return verts, faces, (colors or None)


def load_mesh(path, dtype: torch.dtype = torch.float64) -> Mesh:
    """Read an OBJ or ASCII PLY file. Polygons are fan-triangulated."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    if path.suffix.lower() == ".ply":
        verts, faces, colors = _load_ply(path)
    else:
        verts, faces, colors = _load_obj(path)
    if not faces:
        raise EmptyMeshError(f"{path}: no faces")
    return Mesh.create(
        torch.tensor(verts, dtype=torch.float64).to(dtype),
        torch.tensor(faces, dtype=torch.int64),
        None if colors is None else torch.tensor(colors, dtype=torch.float64),
    )


def save_obj(mesh: Mesh, path) -> Path:
    """OBJ with ``v x y z r g b`` color records when the mesh carries colors."""
    path = Path(path)
    v = mesh.vertices.detach().to(torch.float64).numpy()
    lines = []
    if mesh.vertex_colors is None:
        lines += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in v]
    else:
        c = mesh.vertex_colors.detach().to(torch.float64).numpy()
        lines += [
            f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g} {q[0]:.9g} {q[1]:.9g} {q[2]:.9g}" for p, q in zip(v, c)
        ]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.numpy()]
    path.write_text("\n".join(lines) + "\n")
    return path


def save_ply(mesh: Mesh, path) -> Path:
    path = Path(path)
    v = mesh.vertices.detach().to(torch.float64).numpy()
    rgb = np.clip(np.round(mesh.colors_or_gray().detach().to(torch.float64).numpy() * 255), 0, 255).astype(int)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(v)}",
        "property double x",
        "property double y",
        "property double z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        f"element face {mesh.num_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    body = [f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g} {c[0]} {c[1]} {c[2]}" for p, c in zip(v, rgb)]
    body += [f"3 {a} {b} {c}" for a, b, c in mesh.faces.numpy()]
    path.write_text("\n".join(header + body) + "\n")
    return path


# ---------------------------------------------------------------------------
# geometry ops


def normalize_to_unit_box(mesh: Mesh) -> Mesh:
    """Center the bounding box at the origin and scale its longest side to 1."""
    v = mesh.vertices.detach()
    lo, hi = v.min(dim=0).values, v.max(dim=0).values
    center = (lo + hi) / 2
    extent = float((hi - lo).max())
    if extent <= 0:
        warnings.warn("all vertices coincide; returning centered copy", DegenerateMeshWarning, stacklevel=2)
        extent = 1.0
    return Mesh.create((v - center) / extent, mesh.faces, mesh.vertex_colors)


def subdivide_barycentric(mesh: Mesh) -> Mesh:
    """Insert one vertex at each face barycenter, splitting every face in three.

    New vertex ``n + j`` belongs to face ``j``; children keep the parent winding.
    """
    n, f = mesh.num_vertices, mesh.faces
    centers = mesh.vertices[f].mean(dim=1)
    mid = torch.arange(n, n + f.shape[0])
    a, b, c = f.unbind(1)
    children = torch.stack(
        [torch.stack([a, b, mid], 1), torch.stack([b, c, mid], 1), torch.stack([c, a, mid], 1)], 1
    ).reshape(-1, 3)
    colors = None
    if mesh.vertex_colors is not None:
        colors = torch.cat([mesh.vertex_colors, mesh.vertex_colors[f].mean(dim=1)])
    return Mesh.create(torch.cat([mesh.vertices, centers]), children, colors)


def apply_style(mesh: Mesh, style: StyleOutput, colored: bool = True) -> Mesh:
    """Displace each vertex along its content normal; color it, or paint it gray.

    Gradients flow from the returned vertices/colors back into ``style``.
    """
    if len(style) != mesh.num_vertices:
        raise DimensionError(f"style has {len(style)} entries, mesh has {mesh.num_vertices} vertices")
    d = style.displacements.to(mesh.dtype)
    verts = mesh.vertices + d[:, None] * mesh.vertex_normals
    if colored:
        colors = style.colors.to(mesh.dtype)
    else:
        colors = torch.full_like(mesh.vertices, GRAY)
    # normals of the displaced surface are only needed for export, not for rendering
    return Mesh(verts, mesh.faces, mesh.vertex_normals, colors)


def morph_styles(a: StyleOutput, b: StyleOutput, alpha: float) -> StyleOutput:
    if len(a) != len(b):
        raise DimensionError(f"cannot morph styles of length {len(a)} and {len(b)}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 0.0:
        return StyleOutput(a.colors.clone(), a.displacements.clone())
    if alpha == 1.0:
        return StyleOutput(b.colors.clone(), b.displacements.clone())
    return StyleOutput(
        (1 - alpha) * a.colors + alpha * b.colors,
        (1 - alpha) * a.displacements + alpha * b.displacements,
    )


def _edge_faces(faces: np.ndarray) -> dict[tuple[int, int], list[int]]:
    out: dict[tuple[int, int], list[int]] = defaultdict(list)
    for fi, (a, b, c) in enumerate(faces):
        for u, w in ((a, b), (b, c), (c, a)):
            out[(min(u, w), max(u, w))].append(fi)
    return out


def compute_stats(mesh: Mesh) -> MeshStats:
    faces = mesh.faces.numpy()
    edges = _edge_faces(faces)
    n_edges = len(edges)
    nonmanifold_edges = sum(1 for fs in edges.values() if len(fs) > 2)
    boundary = sum(1 for fs in edges.values() if len(fs) == 1)

    # a vertex is manifold when its incident faces form one edge-connected fan
    # and no edge through it is shared by more than two faces
    vert_faces: dict[int, list[int]] = defaultdict(list)
    for fi, tri in enumerate(faces):
        for v in set(tri.tolist()):
            vert_faces[v].append(fi)
    bad_vertices = 0
    for v, fs in vert_faces.items():
        parent = {f: f for f in fs}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        ok = True
        spokes: dict[int, list[int]] = defaultdict(list)
        for f in fs:
            for w in faces[f]:
                if w != v:
                    spokes[int(w)].append(f)
        for w, sfs in spokes.items():
            if len(set(sfs)) > 2:
                ok = False
            for g in sfs[1:]:
                parent[find(g)] = find(sfs[0])
        if len({find(f) for f in fs}) != 1:
            ok = False
        bad_vertices += not ok

    n = mesh.num_vertices
    return MeshStats(
        face_count=mesh.num_faces,
        vertex_count=n,
        nonmanifold_edge_fraction=nonmanifold_edges / n_edges if n_edges else 0.0,
        nonmanifold_vertex_fraction=bad_vertices / n if n else 0.0,
        boundary_edge_fraction=boundary / n_edges if n_edges else 0.0,
    )


def write_mesh(mesh: Mesh, path) -> Path:
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    if path.suffix.lower() == ".ply":
        return save_ply(mesh, path)
    return save_obj(mesh, path)
