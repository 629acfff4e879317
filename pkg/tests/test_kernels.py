import os
import subprocess
import sys

import numpy as np
import pytest

from partforge import kernels
from partforge.dataset import box_mesh, icosphere
from partforge.geometry import nn_distances_bruteforce

BACKENDS = kernels.backends()


def test_backend_selected():
    assert kernels.BACKEND in BACKENDS


def test_env_forces_python_backend():
    out = subprocess.run([sys.executable, "-c", "from partforge import kernels; print(kernels.BACKEND)"],
                         env={**os.environ, "PARTFORGE_PURE_PYTHON": "1"}, capture_output=True, text=True,
                         check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_nn_exact(name, rng):
    impl = BACKENDS[name]
    for n, m in [(1, 1), (5, 300), (300, 5), (200, 200)]:
        P, Q = rng.uniform(-1, 1, (n, 3)), rng.normal(scale=0.3, size=(m, 3))
        assert np.array_equal(kernels.nn_distances(P, Q, impl), nn_distances_bruteforce(P, Q))
    flat = np.c_[rng.uniform(-1, 1, (50, 2)), np.zeros(50)]
    assert np.array_equal(kernels.nn_distances(flat, flat[::-1], impl), np.zeros(50))
    assert kernels.nn_distances(np.zeros((0, 3)), flat, impl).shape == (0,)


@pytest.mark.parametrize("mesh", [box_mesh([0.05, -0.1, 0.2], [0.3, 0.5, 0.2]), icosphere([0, 0.1, 0], 0.7, 2)])
def test_voxel_backends_agree(mesh):
    grids = [kernels.voxelize_parity(mesh.triangles, 24, impl) for impl in BACKENDS.values()]
    assert all(np.array_equal(g, grids[0]) for g in grids)
    assert grids[0].any()


def test_raster_backends_agree(rng):
    tris = rng.uniform(-1, 1, (40, 3, 2))
    imgs = [kernels.raster_triangles(tris, 16, impl) for impl in BACKENDS.values()]
    assert all(np.array_equal(i, imgs[0]) for i in imgs)


def test_raster_orientation():
    # triangle in the x > 0, y < 0 quadrant only: row = y, column = x
    img = kernels.raster_triangles(np.array([[[0.1, -0.9], [0.9, -0.9], [0.9, -0.1]]]), 4)
    assert img[0, 3] and not img[3, 0] and not img[0, 0]
