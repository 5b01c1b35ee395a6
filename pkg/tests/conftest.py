from pathlib import Path

import pytest
import torch

from meshstyle.mesh import Mesh, load_mesh, normalize_to_unit_box

DATA = Path(__file__).parent / "data"
CORPUS = ["cube_quads.obj", "torus.obj", "icosphere.obj"]


def pytest_configure(config):
    config.addinivalue_line("markers", "extended: needs pretrained weights / GPU; excluded by default")
    config.addinivalue_line("markers", "slow: long-running CPU test")


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture(params=CORPUS)
def corpus_mesh(request):
    return load_mesh(DATA / request.param)


@pytest.fixture
def three_triangles():
    """Three non-coplanar triangles around one vertex (an open tetrahedron)."""
    v = torch.tensor([[0.0, 0.0, 0.0], [1.0, 0.0, 0.1], [0.1, 1.0, 0.0], [0.2, 0.1, 1.0]], dtype=torch.float64)
    f = torch.tensor([[0, 1, 2], [0, 2, 3], [0, 3, 1]])
    return normalize_to_unit_box(Mesh.create(v, f))
