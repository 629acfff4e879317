import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from partforge.dataset import box_mesh, icosphere
from partforge.errors import DomainError, ShapeError
from partforge.geometry import (MetricsReport, PointSample, TriMesh, VoxelGrid, assemble, chamfer,
                                chamfer_bruteforce, convex_hull_mesh, f_score, f_score_bruteforce, iou,
                                load_mesh, max_pairwise_iou, nn_distances_bruteforce, pairwise_iou,
                                pairwise_iou_bruteforce, read_obj, read_ply, sample_surface, save_mesh,
                                voxel_centers, voxelize_bruteforce, voxelize_points, voxelize_solid, write_obj,
                                write_ply)

SQUARE = TriMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])


def test_sample_counts_follow_area():
    # split the unit square unevenly: areas 0.5, 0.25, 0.25
    mesh = TriMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0.5, 1, 0]],
                   [[0, 1, 2], [0, 2, 4], [0, 4, 3]])
    n = 20000
    pts = sample_surface(mesh, n, seed=4).points
    # assign samples to triangles by position
    upper_left = pts[:, 1] > pts[:, 0]
    left_of_mid = pts[:, 0] < 0.5 * pts[:, 1]
    counts = np.array([np.sum(~upper_left), np.sum(upper_left & ~left_of_mid), np.sum(left_of_mid)])
    for c, p in zip(counts, [0.5, 0.25, 0.25]):
        assert abs(c - n * p) < 3 * np.sqrt(n * p * (1 - p))
    a, b = sample_surface(SQUARE, n, seed=2).points, SQUARE.triangles
    half = np.sum(a[:, 1] < a[:, 0])
    assert abs(half - n / 2) < 3 * np.sqrt(n / 4)
    assert b.shape == (2, 3, 3)


def test_samples_inside_single_triangle():
    tri = TriMesh([[0, 0, 0], [2, 0, 0], [0, 1, 1]], [[0, 1, 2]])
    pts = sample_surface(tri, 5000, seed=0).points
    v = tri.vertices
    M = np.stack([v[1] - v[0], v[2] - v[0]], axis=1)
    uv, *_ = np.linalg.lstsq(M, (pts - v[0]).T, rcond=None)
    assert np.all(uv >= -1e-12) and np.all(uv.sum(axis=0) <= 1 + 1e-12)
    assert np.allclose(M @ uv, (pts - v[0]).T, atol=1e-12)


def test_sampling_is_deterministic():
    assert np.array_equal(sample_surface(SQUARE, 100, seed=7).points, sample_surface(SQUARE, 100, seed=7).points)
    assert not np.array_equal(sample_surface(SQUARE, 100, seed=7).points, sample_surface(SQUARE, 100, 8).points)
    with pytest.raises(DomainError):
        sample_surface(TriMesh(np.zeros((3, 3)), [[0, 1, 2]]), 10)


def test_chamfer_examples(rng):
    P = rng.normal(size=(50, 3))
    assert chamfer(P, P) == 0.0
    assert chamfer([[0, 0, 0]], [[1, 0, 0]]) == 2.0
    with pytest.raises(DomainError):
        chamfer(np.zeros((0, 3)), P)


def test_chamfer_matches_bruteforce(rng):
    for _ in range(20):
        P, Q = rng.uniform(-1, 1, (100, 3)), rng.uniform(-1, 1, (100, 3))
        assert abs(chamfer(P, Q) - chamfer_bruteforce(P, Q)) <= 1e-12
        assert chamfer(P, Q) == chamfer(Q, P)


def test_f_score_examples():
    P = np.array([[0.0, 0, 0], [1, 0, 0]])
    assert f_score(P, P) == 1.0
    assert f_score(P, P + 5.0) == 0.0
    # half of P within tau of Q, all of Q within tau of P
    P4 = np.array([[0.0, 0, 0], [1, 0, 0], [5, 0, 0], [9, 0, 0]])
    assert f_score(P4, P) == pytest.approx(2 / 3, abs=1e-15)
    assert f_score_bruteforce(P4, P) == f_score(P4, P)


def test_f_score_threshold_is_strict():
    assert f_score([[0, 0, 0]], [[0.1, 0, 0]], tau=0.1) == 0.0
    assert f_score([[0, 0, 0]], [[0.0999, 0, 0]], tau=0.1) == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_metric_fast_paths_equal_bruteforce(n, m, seed):
    rng = np.random.default_rng(seed)
    P, Q = rng.uniform(-1, 1, (n, 3)), rng.uniform(-1, 1, (m, 3))
    assert abs(chamfer(P, Q) - chamfer_bruteforce(P, Q)) <= 1e-12
    assert f_score(P, Q, 0.3) == f_score_bruteforce(P, Q, 0.3) == f_score(Q, P, 0.3)


def test_nn_on_duplicates_and_clusters(rng):
    Q = np.repeat(rng.uniform(-1, 1, (5, 3)), 20, axis=0)
    P = rng.uniform(-3, 3, (200, 3))
    from partforge import kernels

    assert np.array_equal(kernels.nn_distances(P, Q), nn_distances_bruteforce(P, Q))


def test_voxel_centres():
    c = voxel_centers(4)
    assert c.tolist() == [-0.75, -0.25, 0.25, 0.75]


def test_unit_cube_volume():
    g = voxelize_solid(box_mesh([0, 0, 0], 0.5), 64)
    assert not g.surface_only
    assert abs(g.count() - 32 ** 3) <= 0.02 * 32 ** 3


def test_open_mesh_is_surface_only():
    g = voxelize_solid(TriMesh([[-0.5, -0.5, 0.1], [0.5, -0.5, 0.1], [0.5, 0.5, 0.1], [-0.5, 0.5, 0.1]],
                               [[0, 1, 2], [0, 2, 3]]), 32)
    assert g.surface_only and g.count() > 0
    assert np.all(g.occupancy.sum(axis=2) <= 1)


def test_empty_mesh_gives_empty_grid():
    g = voxelize_solid(TriMesh(np.zeros((0, 3)), np.zeros((0, 3))), 8)
    assert g.count() == 0 and g.resolution == 8


def test_translation_by_one_pitch_shifts_one_cell():
    R = 32
    a = voxelize_solid(box_mesh([0, 0, 0], 0.3), R).occupancy
    b = voxelize_solid(box_mesh([2.0 / R, 0, 0], 0.3), R).occupancy
    assert np.array_equal(np.roll(a, 1, axis=0), b)


def test_face_order_does_not_matter(rng):
    m = icosphere([0.1, 0, -0.2], 0.6, 2)
    shuffled = TriMesh(m.vertices, m.faces[rng.permutation(len(m.faces))])
    assert np.array_equal(voxelize_solid(m, 32).occupancy, voxelize_solid(shuffled, 32).occupancy)


def test_voxelizer_matches_bruteforce(rng):
    for _ in range(3):
        m = icosphere(rng.uniform(-0.3, 0.3, 3), rng.uniform(0.2, 0.6), 1)
        assert np.array_equal(voxelize_solid(m, 16).occupancy, voxelize_bruteforce(m, 16))


def test_pairwise_iou_examples():
    a = voxelize_solid(box_mesh([0, 0, 0], 0.5), 64)
    b = voxelize_solid(box_mesh([0.5, 0, 0], 0.5), 64)
    far = voxelize_solid(box_mesh([-0.7, 0.7, 0.7], 0.2), 64)
    assert pairwise_iou([a, a]) == 1.0
    assert pairwise_iou([a, far]) == 0.0
    assert abs(pairwise_iou([a, b]) - 1 / 3) <= 0.02
    assert pairwise_iou([a]) == 0.0
    empty = VoxelGrid(np.zeros((64, 64, 64), dtype=bool))
    assert pairwise_iou([empty, empty]) == 0.0
    assert max_pairwise_iou([a, b, far]) == iou(a, b)


def test_pairwise_iou_order_invariant(rng):
    grids = [VoxelGrid(rng.random((8, 8, 8)) < 0.3) for _ in range(5)]
    base = pairwise_iou(grids)
    assert abs(base - pairwise_iou_bruteforce(grids)) <= 1e-12
    for _ in range(5):
        perm = rng.permutation(5)
        assert abs(pairwise_iou([grids[i] for i in perm]) - base) <= 1e-12


def test_assemble():
    a, b = box_mesh([0, 0, 0], 0.1), icosphere([0.5, 0, 0], 0.2, 1)
    one = assemble([a])
    assert np.array_equal(one.vertices, a.vertices) and np.array_equal(one.faces, a.faces)
    both = assemble([a, b])
    assert len(both.vertices) == len(a.vertices) + len(b.vertices)
    assert np.array_equal(both.triangles, np.concatenate([a.triangles, b.triangles]))


def test_trimesh_validation_and_watertightness():
    with pytest.raises(ShapeError):
        TriMesh(np.zeros((3, 3)), [[0, 1, 3]])
    assert box_mesh([0, 0, 0], 0.5).is_watertight()
    assert not SQUARE.is_watertight()
    degenerate = TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], [[0, 1, 2], [0, 1, 3]])
    assert len(degenerate.cleaned().faces) == 1


def test_convex_hull_voxelization(rng):
    pts = sample_surface(icosphere([0, 0, 0], 0.5, 2), 500, seed=0).points
    hull = convex_hull_mesh(pts)
    assert hull.is_watertight()
    g = voxelize_points(pts, 32)
    assert not g.surface_only
    assert g.count() > 0.8 * voxelize_solid(icosphere([0, 0, 0], 0.5, 2), 32).count()
    flat = voxelize_points(np.array([[0, 0, 0], [0.5, 0, 0], [0, 0.5, 0]]), 8)
    assert flat.surface_only and flat.count() == 3


def test_mesh_io_round_trip(tmp_path):
    m = icosphere([0.1, 0.2, 0.3], 0.4, 1)
    write_obj(tmp_path / "m.obj", m)
    back = read_obj(tmp_path / "m.obj")
    assert np.array_equal(back.vertices, m.vertices) and np.array_equal(back.faces, m.faces)
    write_ply(tmp_path / "m.ply", m.vertices, m.faces)
    v, f = read_ply(tmp_path / "m.ply")
    assert np.array_equal(v, m.vertices) and np.array_equal(f, m.faces)
    save_mesh(tmp_path / "p.ply", m)
    assert np.array_equal(load_mesh(tmp_path / "p.ply").faces, m.faces)
    write_ply(tmp_path / "pts.ply", m.vertices)
    pts = load_mesh(tmp_path / "pts.ply")
    assert pts.is_empty and np.array_equal(pts.vertices, m.vertices)


def test_point_sample_len():
    assert len(PointSample(np.zeros((4, 3)), 1)) == 4


def test_metrics_report():
    r = MetricsReport()
    r.add("a", 0.5, 0.8, 0.0, {"surface": 0})
    r.add("b", 1.5, 0.4, 0.2, {"surface": 0})
    s = r.summary()
    assert s["CD"] == 1.0 and s["IoU"] == 0.1 and s["count"] == 2
    assert s["F-Score"] == pytest.approx(0.6, abs=1e-15)
    payload = json.loads(r.to_json())
    assert payload["n"] == 10000 and payload["R"] == 64 and payload["tau"] == 0.1
    assert set(payload["assets"]) == {"a", "b"}
    assert MetricsReport().summary()["count"] == 0
