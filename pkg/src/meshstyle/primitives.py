"""Small procedural meshes for tests and demos."""

from __future__ import annotations

import math

import torch

from .mesh import Mesh


def cube(quads: bool = False):
    """Unit cube [-0.5, 0.5]^3, outward winding. ``quads=True`` returns raw polygons."""
    v = [[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)]
    q = [
        [0, 1, 3, 2],  # -x
        [4, 6, 7, 5],  # +x
        [0, 4, 5, 1],  # -y
        [2, 3, 7, 6],  # +y
        [0, 2, 6, 4],  # -z
        [1, 5, 7, 3],  # +z
    ]
    if quads:
        return v, q
    tris = [[a, b, c] for a, b, c, d in q] + [[a, c, d] for a, b, c, d in q]
    return Mesh.create(torch.tensor(v, dtype=torch.float64), torch.tensor(tris))


def uv_sphere(stacks: int = 11, slices: int = 25, radius: float = 1.0) -> Mesh:
    """Latitude/longitude sphere with 2*slices*(stacks-1) faces (500 by default)."""
    verts = [[0.0, radius, 0.0]]
    for i in range(1, stacks):
        phi = math.pi * i / stacks
        for j in range(slices):
            th = 2 * math.pi * j / slices
            verts.append([radius * math.sin(phi) * math.sin(th), radius * math.cos(phi), radius * math.sin(phi) * math.cos(th)])
    verts.append([0.0, -radius, 0.0])
    south = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * slices + (j % slices)

    faces = []
    for j in range(slices):
        faces.append([0, ring(1, j), ring(1, j + 1)])
    for i in range(1, stacks - 1):
        for j in range(slices):
            a, b, c, d = ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1)
            faces += [[a, c, d], [a, d, b]]
    for j in range(slices):
        faces.append([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)])
    return Mesh.create(torch.tensor(verts, dtype=torch.float64), torch.tensor(faces))


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> Mesh:
    t = (1 + 5**0.5) / 2
    verts = [
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ]
    faces = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    v = [torch.tensor(p, dtype=torch.float64) for p in verts]
    v = [p / p.norm() for p in v]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / m.norm())
                cache[key] = len(v) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    return Mesh.create(torch.stack(v) * radius, torch.tensor(faces))


def torus(major: int = 24, minor: int = 12, R: float = 1.0, r: float = 0.35) -> Mesh:
    verts, faces = [], []
    for i in range(major):
        u = 2 * math.pi * i / major
        for j in range(minor):
            w = 2 * math.pi * j / minor
            verts.append([(R + r * math.cos(w)) * math.cos(u), r * math.sin(w), (R + r * math.cos(w)) * math.sin(u)])
    for i in range(major):
        for j in range(minor):
            a = i * minor + j
            b = ((i + 1) % major) * minor + j
            c = ((i + 1) % major) * minor + (j + 1) % minor
            d = i * minor + (j + 1) % minor
            faces += [[a, d, c], [a, c, b]]
    return Mesh.create(torch.tensor(verts, dtype=torch.float64), torch.tensor(faces))
