import json

import numpy as np
import pytest

from partforge.dataset import (TOY_KINDS, CanonicalAsset, CurationThresholds, ToySpec, box_mesh, curate,
                               curate_directory, decode_points, encode_condition, encode_monolithic, encode_toy,
                               generate_toy, generate_toy_set, icosphere, load_part_dir, load_toy_archive,
                               normalize_canonical, silhouette, summarize, write_manifest, write_toy_archive)
from partforge.errors import ConfigError
from partforge.geometry import TriMesh, max_pairwise_iou, save_mesh, voxelize_solid

from corpus import overlap_iou, write_corpus


def test_curate_part_count_limit():
    row = [box_mesh([i * 0.5, 0, 0], 0.2) for i in range(17)]
    assert curate(row).verdict == "rejected:part_count"
    assert curate(row[:15]).verdict == "kept"
    assert curate([]).verdict == "rejected:empty"


def test_curate_overlap():
    unit = box_mesh([0, 0, 0], 0.5)
    rec = curate([unit, unit])
    assert rec.verdict == "rejected:iou" and rec.max_iou == 1.0
    three = [box_mesh([i * 2.0, 0, 0], 0.5) for i in range(3)]
    rec = curate(three)
    assert rec.kept and rec.max_iou == 0.0


def test_curate_texture_requirement():
    parts = [box_mesh([0, 0, 0], 0.2), box_mesh([1, 0, 0], 0.2)]
    th = CurationThresholds(require_texture=True)
    assert curate(parts, th).verdict == "rejected:texture"
    assert curate(parts, th, has_texture=True).kept


def test_normalize_uses_one_transform():
    a, b = box_mesh([3, 0, 0], [1, 0.5, 0.5]), box_mesh([7, 1, 0], 0.5)
    canon = normalize_canonical([a, b])
    allv = np.concatenate([p.vertices for p in canon.parts])
    assert np.isclose(np.abs(allv).max(), 0.99)
    assert np.allclose((allv.min(axis=0) + allv.max(axis=0)) / 2, 0)
    for raw, out in zip([a, b], canon.parts):
        assert np.allclose(raw.vertices * canon.scale + canon.translation, out.vertices)
    # relative layout survives: distances shrink by the common scale
    d_raw = np.linalg.norm(a.vertices.mean(0) - b.vertices.mean(0))
    d_out = np.linalg.norm(canon.parts[0].vertices.mean(0) - canon.parts[1].vertices.mean(0))
    assert np.isclose(d_out, d_raw * canon.scale)


@pytest.mark.parametrize("kind", TOY_KINDS)
@pytest.mark.parametrize("n", [1, 2, 4, 7])
def test_toys_are_watertight_disjoint_and_canonical(kind, n):
    asset = generate_toy(ToySpec(kind, n, seed=11 * n))
    assert asset.N == n == len(asset.labels)
    assert all(p.is_watertight() for p in asset.parts)
    allv = np.concatenate([p.vertices for p in asset.parts])
    assert np.abs(allv).max() <= 1.0
    grids = [voxelize_solid(p, 64) for p in asset.parts]
    assert max_pairwise_iou(grids) == 0.0


def test_toy_generation_is_deterministic():
    a, b = generate_toy_set([2, 3], 3, seed=5), generate_toy_set([2, 3], 3, seed=5)
    assert [r.asset_id for r in a] == [f"toy_n{n}_{j:04d}" for n in (2, 3) for j in range(3)]
    for x, y in zip(a, b):
        assert x.kind == y.kind and x.seed == y.seed
        assert all(np.array_equal(p.vertices, q.vertices) for p, q in zip(x.asset.parts, y.asset.parts))
    with pytest.raises(ConfigError):
        ToySpec("teapot", 2, 0)


def test_toy_archive_round_trip(tmp_path):
    recs = generate_toy_set([1, 2], 2, seed=0)
    write_toy_archive(tmp_path, recs, {"part_counts": [1, 2]})
    back = load_toy_archive(tmp_path)
    assert [r.asset_id for r in back] == [r.asset_id for r in recs]
    for x, y in zip(recs, back):
        assert all(np.allclose(p.vertices, q.vertices, atol=1e-12) for p, q in zip(x.asset.parts, y.asset.parts))
    assert len(load_toy_archive(tmp_path, limit=1)) == 1
    assert (tmp_path / "glb" / f"{recs[0].asset_id}.glb").exists()


def test_load_part_dir(tmp_path):
    parts = [box_mesh([0, 0, 0], 0.1), icosphere([0.5, 0, 0], 0.2, 1)]
    for i, p in enumerate(parts):
        save_mesh(tmp_path / f"part_{i:02d}.ply", p)
    (tmp_path / "assembly.ply").write_text("ignored")
    asset = load_part_dir(tmp_path)
    assert asset.N == 2 and np.array_equal(asset.parts[1].faces, parts[1].faces)


def test_encode_toy_points_lie_on_parts():
    asset = generate_toy(ToySpec("stacked_boxes", 3, seed=2))
    lat = encode_toy(asset, K=32, C=8, seed=1)
    assert (lat.N, lat.K, lat.C) == (3, 32, 8)
    for pts, part, p in zip(decode_points(lat), asset.parts, lat.parts):
        lo, hi = part.vertices.min(0), part.vertices.max(0)
        assert np.all(pts >= lo - 1e-12) and np.all(pts <= hi + 1e-12)
        # on a box surface at least one coordinate sits on a face
        on_face = np.isclose(pts, lo, atol=1e-9) | np.isclose(pts, hi, atol=1e-9)
        assert on_face.any(axis=1).all()
        assert np.all(p.tokens[:, 3:] == 0)
    mono = encode_monolithic(asset, 32, 8)
    assert mono.N == 1
    with pytest.raises(ConfigError):
        encode_toy(asset, 4, 2)


def test_silhouette_empty_and_full():
    assert not silhouette(CanonicalAsset([])).any()
    full = CanonicalAsset([box_mesh([0, 0, 0], 1.0)])
    assert silhouette(full, 16).all()
    left = CanonicalAsset([box_mesh([-0.5, 0, 0], [0.5, 1.0, 0.5])])
    img = silhouette(left, 8)
    assert img[:, :4].all() and not img[:, 4:].any()


def test_condition_tokens():
    asset = generate_toy(ToySpec("tableau", 3, seed=4))
    c = encode_condition(asset, cond_width=12)
    assert c.tokens.shape == (64, 12)
    assert np.array_equal(c.tokens, encode_condition(asset, cond_width=12).tokens)
    other = encode_condition(generate_toy(ToySpec("l_bracket", 3, seed=4)), cond_width=12)
    assert not np.allclose(c.tokens, other.tokens)


def test_curation_corpus(tmp_path):
    expected = write_corpus(tmp_path)
    records = curate_directory(tmp_path)
    assert [r.asset_id for r in records] == sorted(expected)
    for r in records:
        n, verdict = expected[r.asset_id]
        assert r.verdict == verdict, r.asset_id
        if verdict != "rejected:parse" and verdict != "rejected:unsupported":
            assert r.part_count == n
    by_id = {r.asset_id: r for r in records}
    assert by_id["a10_textured.glb"].has_texture
    assert by_id["a04_half_overlap.glb"].max_iou == pytest.approx(overlap_iou(0.5), abs=0.02)
    assert by_id["a05_slight_overlap.glb"].max_iou == pytest.approx(overlap_iou(0.1), abs=0.01)
    s = summarize(records)
    assert s["kept"] == 6 and s["total"] == 12
    assert s["rejections"] == {"rejected:iou": 3, "rejected:parse": 1, "rejected:part_count": 1,
                               "rejected:unsupported": 1}
    threaded = curate_directory(tmp_path, threads=4)
    assert [r.to_json() for r in threaded] == [r.to_json() for r in records]
    write_manifest(tmp_path / "m.jsonl", records, CurationThresholds())
    lines = (tmp_path / "m.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["kind"] == "header" and len(lines) == 13


def test_degenerate_part_is_ignored_by_voxelizer():
    flat = TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    rec = curate([flat, box_mesh([0, 0, 0], 0.5)])
    assert rec.part_count == 2 and rec.kept
