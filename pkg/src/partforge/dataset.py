"""Part-level data: curation filters, canonical normalisation, toy assets and
their desk-scale latent / condition encodings."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, ParseError, PartforgeError
from .geometry import TriMesh, assemble, load_mesh, max_pairwise_iou, sample_surface, voxelize_solid, write_ply
from .gltf import build_glb, extract_parts_from, load_gltf
from .latent import AssetLatent, PartTokenSet

PART_COUNT_RULE = "mesh-bearing scene nodes, primitives merged per node"


# --- primitives -----------------------------------------------------------

def box_mesh(center, half) -> TriMesh:
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(half, dtype=np.float64) * np.ones(3)
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    faces = np.array([
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ])
    return TriMesh(c + corners * h, faces)


def icosphere(center, radius: float, subdivisions: int = 2) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
             [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    faces = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
             [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
             [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    return TriMesh(np.asarray(center, dtype=np.float64) + radius * np.array(verts), np.array(faces))


# --- canonical space ------------------------------------------------------

@dataclass
class CanonicalAsset:
    parts: list[TriMesh]
    scale: float = 1.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    labels: list[str] = field(default_factory=list)

    @property
    def N(self) -> int:
        return len(self.parts)

    def assembled(self) -> TriMesh:
        return assemble(self.parts)


def normalize_canonical(parts, margin: float = 0.01, labels=None) -> CanonicalAsset:
    """Map the union bounding box into [-1, 1]^3 with one uniform scale and shift.

    Every part receives the same transform; parts are never recentred alone.
    """
    parts = list(parts)
    if not parts or all(p.is_empty for p in parts):
        return CanonicalAsset(parts, 1.0, np.zeros(3), list(labels or []))
    allv = np.concatenate([p.vertices for p in parts if len(p.vertices)])
    lo, hi = allv.min(axis=0), allv.max(axis=0)
    center = (lo + hi) / 2.0
    half = float(np.max(hi - lo)) / 2.0
    s = (1.0 - margin) / half if half > 0 else 1.0
    tau = -s * center
    return CanonicalAsset([p.transformed(s, tau) for p in parts], s, tau, list(labels or []))


# --- toy generators -------------------------------------------------------

TOY_KINDS = ("stacked_boxes", "spheres_on_rod", "l_bracket", "tableau")


@dataclass
class ToySpec:
    kind: str
    N: int
    seed: int
    size_range: tuple = (0.25, 0.5)
    gap_range: tuple = (0.08, 0.16)

    def __post_init__(self):
        if self.kind not in TOY_KINDS:
            raise ConfigError(f"unknown toy kind {self.kind!r}; choose from {TOY_KINDS}")
        if self.N < 1:
            raise ConfigError("toy assets need at least one part")


def _stacked_boxes(spec, rng):
    lo, hi = spec.size_range
    parts, labels, y = [], [], 0.0
    for i in range(spec.N):
        half = np.array([rng.uniform(lo, hi) * 1.6, rng.uniform(lo, hi) * 0.6, rng.uniform(lo, hi) * 1.6])
        x = rng.uniform(-0.15, 0.15)
        parts.append(box_mesh([x, y + half[1], 0.0], half))
        labels.append(f"box_{i}")
        y += 2 * half[1] + rng.uniform(*spec.gap_range)
    return parts, labels


def _spheres_on_rod(spec, rng):
    lo, hi = spec.size_range
    if spec.N == 1:
        return [icosphere([0, 0, 0], rng.uniform(lo, hi) * 2)], ["sphere_0"]
    rod_half = 0.08
    radii = [rng.uniform(lo, hi) * 0.8 for _ in range(spec.N - 1)]
    ys, y = [], 0.0
    for r in radii:
        ys.append(y + r)
        y += 2 * r + rng.uniform(*spec.gap_range)
    length = max(y, 0.5)
    parts = [box_mesh([0, length / 2, 0], [rod_half, length / 2, rod_half])]
    labels = ["rod"]
    for i, (r, yc) in enumerate(zip(radii, ys)):
        side = 1 if i % 2 == 0 else -1
        gap = rng.uniform(*spec.gap_range)
        parts.append(icosphere([side * (rod_half + r + gap), yc, 0], r))
        labels.append(f"sphere_{i}")
    return parts, labels


def _l_bracket(spec, rng):
    lo, hi = spec.size_range
    if spec.N == 1:
        return [box_mesh([0, 0, 0], [rng.uniform(lo, hi) * 2, rng.uniform(lo, hi), rng.uniform(lo, hi)])], ["plate"]
    gap = rng.uniform(*spec.gap_range)
    thick = rng.uniform(0.08, 0.14)
    length = rng.uniform(1.2, 1.8)
    depth = rng.uniform(0.4, 0.7)
    height = rng.uniform(0.9, 1.4)
    parts = [box_mesh([length / 2, thick / 2, 0], [length / 2, thick / 2, depth / 2])]
    labels = ["base"]
    parts.append(box_mesh([-gap - thick / 2, height / 2, 0], [thick / 2, height / 2, depth / 2]))
    labels.append("upright")
    n_bolts = spec.N - 2
    if n_bolts:
        slot = length / n_bolts
        for i in range(n_bolts):
            half = min(rng.uniform(0.04, 0.08), slot / 2 - 0.02)
            cx = slot * (i + 0.5)
            parts.append(box_mesh([cx, thick + gap + half, rng.uniform(-0.1, 0.1)], [half, half, half]))
            labels.append(f"bolt_{i}")
    return parts, labels


def _tableau(spec, rng):
    lo, hi = spec.size_range
    cols = math.ceil(math.sqrt(spec.N))
    parts, labels = [], []
    for i in range(spec.N):
        r, c = divmod(i, cols)
        center = np.array([c * 1.0, r * 1.0, 0.0]) + rng.uniform(-0.05, 0.05, 3)
        size = rng.uniform(lo, hi) * 0.8
        if rng.random() < 0.5:
            parts.append(box_mesh(center, size * rng.uniform(0.6, 1.0, 3)))
            labels.append(f"box_{i}")
        else:
            parts.append(icosphere(center, size))
            labels.append(f"sphere_{i}")
    return parts, labels


_GENERATORS = {"stacked_boxes": _stacked_boxes, "spheres_on_rod": _spheres_on_rod,
               "l_bracket": _l_bracket, "tableau": _tableau}


def generate_toy(spec: ToySpec) -> CanonicalAsset:
    """Watertight, pairwise-disjoint primitive parts, normalised to the canonical cube."""
    rng = np.random.default_rng(spec.seed)
    parts, labels = _GENERATORS[spec.kind](spec, rng)
    return normalize_canonical(parts, labels=labels)


# --- curation -------------------------------------------------------------

@dataclass
class CurationThresholds:
    max_parts: int = 16  # exclusive: kept assets have fewer parts
    max_iou: float = 0.1  # exclusive
    require_texture: bool = False
    resolution: int = 64


@dataclass
class CurationRecord:
    asset_id: str
    source: str
    part_count: int
    has_texture: bool
    max_iou: float | None
    verdict: str

    @property
    def kept(self) -> bool:
        return self.verdict == "kept"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def curate(parts, thresholds: CurationThresholds | None = None, asset_id: str = "", source: str = "",
           has_texture: bool = False) -> CurationRecord:
    """Apply the part-count, texture and overlap filters to one asset."""
    th = thresholds or CurationThresholds()
    parts = [p[1] if isinstance(p, tuple) else p for p in parts]
    n = len(parts)

    def record(max_iou, verdict):
        return CurationRecord(asset_id, source, n, bool(has_texture), max_iou, verdict)

    if n == 0:
        return record(None, "rejected:empty")
    if n >= th.max_parts:
        return record(None, "rejected:part_count")
    if th.require_texture and not has_texture:
        return record(None, "rejected:texture")
    canon = normalize_canonical(parts)
    grids = [voxelize_solid(p, th.resolution) for p in canon.parts]
    worst = round(float(max_pairwise_iou(grids)), 12)
    if worst >= th.max_iou:
        return record(worst, "rejected:iou")
    return record(worst, "kept")


def curate_file(path: Path, thresholds: CurationThresholds | None = None, root: Path | None = None) -> CurationRecord:
    path = Path(path)
    asset_id = str(path.relative_to(root)) if root else path.name
    try:
        gd = load_gltf(path.read_bytes(), base_dir=path.parent)
        parts = extract_parts_from(gd)
    except OSError:
        return CurationRecord(asset_id, str(path), 0, False, None, "rejected:io")
    except ParseError:
        return CurationRecord(asset_id, str(path), 0, False, None, "rejected:parse")
    except PartforgeError:
        return CurationRecord(asset_id, str(path), 0, False, None, "rejected:unsupported")
    return curate([m for _, m in parts], thresholds, asset_id, str(path), gd.has_texture)


def find_assets(in_dir: Path) -> list[Path]:
    in_dir = Path(in_dir)
    return sorted(p for p in in_dir.rglob("*") if p.suffix.lower() in (".glb", ".gltf") and p.is_file())


def curate_directory(in_dir: Path, thresholds: CurationThresholds | None = None, threads: int = 1):
    """Curate every .glb/.gltf below ``in_dir``; records come back in path order."""
    in_dir = Path(in_dir)
    paths = find_assets(in_dir)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda p: curate_file(p, thresholds, in_dir), paths))
    return [curate_file(p, thresholds, in_dir) for p in paths]


def manifest_header(thresholds: CurationThresholds) -> dict:
    return {"kind": "header", "part_count_rule": PART_COUNT_RULE, "thresholds": asdict(thresholds)}


def write_manifest(path: Path, records, thresholds: CurationThresholds) -> None:
    lines = [json.dumps(manifest_header(thresholds), sort_keys=True)]
    lines += [r.to_json() for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def summarize(records) -> dict:
    kept = [r for r in records if r.kept]
    hist: dict[str, int] = {}
    for r in records:
        hist[str(r.part_count)] = hist.get(str(r.part_count), 0) + 1
    reasons: dict[str, int] = {}
    for r in records:
        if not r.kept:
            reasons[r.verdict] = reasons.get(r.verdict, 0) + 1
    return {"total": len(records), "kept": len(kept), "rejected": len(records) - len(kept),
            "rejections": dict(sorted(reasons.items())),
            "part_count_histogram": dict(sorted(hist.items(), key=lambda kv: int(kv[0])))}


# --- desk-scale encoders --------------------------------------------------

def encode_toy(asset: CanonicalAsset, K: int, C: int, seed: int = 0) -> AssetLatent:
    """Latent stand-in: K area-weighted surface points per part, zero-padded to C channels."""
    if C < 3:
        raise ConfigError("latent width must be at least 3")
    parts = []
    for i, mesh in enumerate(asset.parts):
        pts = sample_surface(mesh, K, seed=[int(seed), i]).points
        tokens = np.zeros((K, C))
        tokens[:, :3] = pts
        parts.append(PartTokenSet(tokens, i))
    return AssetLatent(parts)


def encode_monolithic(asset: CanonicalAsset, K: int, C: int, seed: int = 0) -> AssetLatent:
    """The whole asset as a single part."""
    return encode_toy(CanonicalAsset([asset.assembled()]), K, C, seed)


def decode_points(latent) -> list[np.ndarray]:
    """First three channels of each part's tokens, read as 3-D points."""
    if isinstance(latent, AssetLatent):
        return [p.tokens[:, :3].copy() for p in latent.parts]
    return [np.asarray(z)[:, :3].copy() for z in latent]


def silhouette(asset: CanonicalAsset, res: int = 32, impl=None) -> np.ndarray:
    """Orthographic coverage seen along z: bool (res, res), row = y, column = x."""
    tris = [p.triangles[:, :, :2] for p in asset.parts if not p.is_empty]
    if not tris:
        return np.zeros((res, res), dtype=bool)
    return kernels.raster_triangles(np.concatenate(tris), res, impl=impl)


_PROJECTION_SEED = 20250613


def condition_projection(in_dim: int, cond_width: int) -> np.ndarray:
    rng = np.random.default_rng(_PROJECTION_SEED)
    return rng.standard_normal((in_dim, cond_width)) / math.sqrt(in_dim)


def encode_condition(asset: CanonicalAsset, cond_width: int = 16, res: int = 32, patch: int = 4):
    """Silhouette patches (plus patch-centre coordinates) projected to ``cond_width``.

    A 32x32 silhouette split into 4x4 patches gives 64 tokens.
    """
    from .denoiser import ConditionTokens

    img = silhouette(asset, res).astype(np.float64)
    g = res // patch
    tiles = img.reshape(g, patch, g, patch).transpose(0, 2, 1, 3).reshape(g * g, patch * patch)
    centers = -1.0 + (np.arange(g) + 0.5) * (2.0 / g)
    cy, cx = np.meshgrid(centers, centers, indexing="ij")
    feats = np.concatenate([tiles, cx.reshape(-1, 1), cy.reshape(-1, 1)], axis=1)
    return ConditionTokens(feats @ condition_projection(feats.shape[1], cond_width))


# --- toy archive ----------------------------------------------------------

@dataclass
class ToyRecord:
    asset_id: str
    kind: str
    N: int
    seed: int
    labels: list[str]
    asset: CanonicalAsset | None = None


def toy_seed(base_seed: int, n: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, n, index]).generate_state(1)[0])


def generate_toy_set(part_counts, per_count: int, seed: int, kinds=TOY_KINDS) -> list[ToyRecord]:
    records = []
    for n in part_counts:
        for j in range(per_count):
            s = toy_seed(seed, n, j)
            kind = kinds[np.random.default_rng(s).integers(len(kinds))]
            asset = generate_toy(ToySpec(kind, n, s))
            records.append(ToyRecord(f"toy_n{n}_{j:04d}", kind, n, s, asset.labels, asset))
    return records


def write_toy_archive(out_dir: Path, records: list[ToyRecord], spec: dict) -> None:
    out_dir = Path(out_dir)
    (out_dir / "glb").mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"kind": "header", "spec": spec}, sort_keys=True)]
    for r in records:
        mdir = out_dir / "meshes" / r.asset_id
        mdir.mkdir(parents=True, exist_ok=True)
        files = []
        for i, part in enumerate(r.asset.parts):
            write_ply(mdir / f"part_{i:02d}.ply", part.vertices, part.faces)
            files.append(f"meshes/{r.asset_id}/part_{i:02d}.ply")
        (out_dir / "glb" / f"{r.asset_id}.glb").write_bytes(build_glb(r.asset.parts))
        lines.append(json.dumps({"asset_id": r.asset_id, "kind": r.kind, "N": r.N, "seed": r.seed,
                                 "labels": r.labels, "parts": files,
                                 "scale": r.asset.scale, "translation": list(map(float, r.asset.translation))},
                                sort_keys=True))
    (out_dir / "manifest.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_toy_archive(root: Path, limit: int | None = None) -> list[ToyRecord]:
    root = Path(root)
    path = root / "manifest.jsonl"
    if not path.exists():
        raise ParseError(f"{root} has no manifest.jsonl")
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        row = json.loads(line)
        if row.get("kind") == "header":
            continue
        parts = [load_mesh(root / f) for f in row["parts"]]
        asset = CanonicalAsset(parts, row.get("scale", 1.0), np.asarray(row.get("translation", [0, 0, 0])),
                               row.get("labels", []))
        out.append(ToyRecord(row["asset_id"], row["kind"], row["N"], row["seed"], row.get("labels", []), asset))
        if limit is not None and len(out) >= limit:
            break
    return out


def load_part_dir(path: Path) -> CanonicalAsset:
    """Every part_*.ply / part_*.obj in a directory, in name order."""
    files = sorted(p for p in Path(path).iterdir() if p.stem.startswith("part_") and p.suffix in (".ply", ".obj"))
    return CanonicalAsset([load_mesh(f) for f in files])
