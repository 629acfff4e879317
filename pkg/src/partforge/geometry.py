"""Triangle meshes, surface sampling, voxelisation and the evaluation metrics.

Metrics follow one fixed convention:

* Chamfer distance is the mean nearest-neighbour Euclidean (non-squared)
  distance P->Q plus the same for Q->P.
* F-score counts a point as matched when its nearest neighbour in the other
  set is strictly closer than ``tau``.
* Pairwise IoU is the mean over unordered part pairs of |A & B| / |A | B| on
  an R^3 occupancy grid over [-1, 1]^3.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import kernels
from .errors import DomainError, ParseError, ShapeError

DEFAULT_SAMPLES = 10_000
DEFAULT_TAU = 0.1
DEFAULT_RESOLUTION = 64


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ShapeError("face index out of range")

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        tri = self.triangles
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def cleaned(self) -> "TriMesh":
        """Drop zero-area faces."""
        if self.is_empty:
            return self
        keep = self.face_areas() > 0.0
        return TriMesh(self.vertices, self.faces[keep])

    def is_watertight(self) -> bool:
        """Every undirected edge is shared by exactly two faces with opposite winding."""
        if self.is_empty:
            return False
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        undirected = np.sort(directed, axis=1)
        _, counts = np.unique(undirected, axis=0, return_counts=True)
        if np.any(counts != 2):
            return False
        _, dcounts = np.unique(directed, axis=0, return_counts=True)
        return bool(np.all(dcounts == 1))

    def transformed(self, scale: float, translation) -> "TriMesh":
        return TriMesh(self.vertices * scale + np.asarray(translation, dtype=np.float64), self.faces.copy())

    def bounds(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])


@dataclass
class PointSample:
    points: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    def __len__(self):
        return len(self.points)


@dataclass
class VoxelGrid:
    occupancy: np.ndarray  # bool (R, R, R), indexed [x, y, z]
    surface_only: bool = False

    @property
    def resolution(self) -> int:
        return self.occupancy.shape[0]

    def count(self) -> int:
        return int(self.occupancy.sum())


def voxel_centers(R: int) -> np.ndarray:
    return -1.0 + (np.arange(R) + 0.5) * (2.0 / R)


def _points(x) -> np.ndarray:
    if isinstance(x, PointSample):
        return x.points
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


def sample_surface(mesh: TriMesh, n: int = DEFAULT_SAMPLES, seed: int = 0) -> PointSample:
    """Area-weighted uniform samples on the mesh surface, deterministic per seed."""
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas() if not mesh.is_empty else np.zeros(0)
    total = areas.sum()
    if total <= 0.0:
        raise DomainError("cannot sample a mesh with zero surface area")
    face = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random((n, 2))
    # fold the unit square onto the triangle
    flip = u.sum(axis=1) > 1.0
    u[flip] = 1.0 - u[flip]
    tri = mesh.triangles[face]
    pts = tri[:, 0] + u[:, :1] * (tri[:, 1] - tri[:, 0]) + u[:, 1:] * (tri[:, 2] - tri[:, 0])
    return PointSample(pts, seed)


def nn_distances_bruteforce(P, Q) -> np.ndarray:
    P, Q = _points(P), _points(Q)
    d2 = ((P[:, None, :] - Q[None, :, :]) ** 2).sum(axis=-1)
    return np.sqrt(d2.min(axis=1))


def _check_nonempty(P, Q):
    if len(P) == 0 or len(Q) == 0:
        raise DomainError("metric needs two non-empty point sets")


def chamfer(P, Q) -> float:
    P, Q = _points(P), _points(Q)
    _check_nonempty(P, Q)
    return float(kernels.nn_distances(P, Q).mean() + kernels.nn_distances(Q, P).mean())


def chamfer_bruteforce(P, Q) -> float:
    P, Q = _points(P), _points(Q)
    _check_nonempty(P, Q)
    return float(nn_distances_bruteforce(P, Q).mean() + nn_distances_bruteforce(Q, P).mean())


def _f_from_distances(d_pq, d_qp, tau):
    precision = float(np.mean(d_pq < tau))
    recall = float(np.mean(d_qp < tau))
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def f_score(P, Q, tau: float = DEFAULT_TAU) -> float:
    P, Q = _points(P), _points(Q)
    _check_nonempty(P, Q)
    return _f_from_distances(kernels.nn_distances(P, Q), kernels.nn_distances(Q, P), tau)


def f_score_bruteforce(P, Q, tau: float = DEFAULT_TAU) -> float:
    P, Q = _points(P), _points(Q)
    _check_nonempty(P, Q)
    return _f_from_distances(nn_distances_bruteforce(P, Q), nn_distances_bruteforce(Q, P), tau)


def _surface_band(mesh: TriMesh, R: int) -> np.ndarray:
    # Occupancy of every voxel touched by a dense surface sampling; spacing is
    # a quarter voxel so thin sheets leave no holes at this resolution.
    pitch = 2.0 / R
    area = mesh.face_areas().sum()
    n = int(min(max(area / (pitch / 4.0) ** 2, 1000), 2_000_000))
    pts = np.concatenate([sample_surface(mesh, n, seed=0).points, mesh.vertices])
    idx = np.floor((pts + 1.0) / pitch).astype(np.int64)
    idx = idx[np.all((idx >= 0) & (idx < R), axis=1)]
    occ = np.zeros((R, R, R), dtype=bool)
    occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return occ


def voxelize_solid(mesh: TriMesh, R: int = DEFAULT_RESOLUTION, impl=None) -> VoxelGrid:
    """Occupancy of voxel centres inside the mesh.

    Watertight meshes use +x parity ray casting; anything else falls back to a
    surface band and the grid is flagged ``surface_only``.
    """
    mesh = mesh.cleaned()
    if mesh.is_empty:
        return VoxelGrid(np.zeros((R, R, R), dtype=bool))
    if not mesh.is_watertight():
        return VoxelGrid(_surface_band(mesh, R), surface_only=True)
    return VoxelGrid(kernels.voxelize_parity(mesh.triangles, R, impl=impl))


def voxelize_bruteforce(mesh: TriMesh, R: int) -> np.ndarray:
    """Reference parity count: every voxel centre against every face."""
    jy, jz = kernels.RAY_JITTER
    c = voxel_centers(R)
    tri = mesh.cleaned().triangles
    occ = np.zeros((R, R, R), dtype=bool)
    for j in range(R):
        for k in range(R):
            py, pz = c[j] + jy, c[k] + jz
            hits = []
            for a, b, cc in tri:
                area2 = (b[1] - a[1]) * (cc[2] - a[2]) - (b[2] - a[2]) * (cc[1] - a[1])
                if area2 == 0.0:
                    continue
                w0 = (cc[1] - b[1]) * (pz - b[2]) - (cc[2] - b[2]) * (py - b[1])
                w1 = (a[1] - cc[1]) * (pz - cc[2]) - (a[2] - cc[2]) * (py - cc[1])
                w2 = (b[1] - a[1]) * (pz - a[2]) - (b[2] - a[2]) * (py - a[1])
                if (w0 >= 0 and w1 >= 0 and w2 >= 0) or (w0 <= 0 and w1 <= 0 and w2 <= 0):
                    hits.append((w0 * a[0] + w1 * b[0] + w2 * cc[0]) / area2)
            hits = np.array(hits)
            for i in range(R):
                occ[i, j, k] = np.sum(hits < c[i]) % 2 == 1
    return occ


def iou(a: VoxelGrid, b: VoxelGrid) -> float:
    union = np.logical_or(a.occupancy, b.occupancy).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a.occupancy, b.occupancy).sum() / union)


def pairwise_iou(parts) -> float:
    """Mean IoU over unordered pairs; 0 for fewer than two parts."""
    parts = list(parts)
    if len(parts) < 2:
        return 0.0
    flat = np.stack([p.occupancy.reshape(-1) for p in parts]).astype(np.float64)
    inter = flat @ flat.T
    sizes = np.diag(inter)
    vals = []
    for i, j in itertools.combinations(range(len(parts)), 2):
        union = sizes[i] + sizes[j] - inter[i, j]
        vals.append(0.0 if union == 0 else inter[i, j] / union)
    return float(np.mean(vals))


def max_pairwise_iou(parts) -> float:
    parts = list(parts)
    if len(parts) < 2:
        return 0.0
    return max(iou(a, b) for a, b in itertools.combinations(parts, 2))


def pairwise_iou_bruteforce(parts) -> float:
    parts = list(parts)
    if len(parts) < 2:
        return 0.0
    return float(np.mean([iou(a, b) for a, b in itertools.combinations(parts, 2)]))


def assemble(parts) -> TriMesh:
    """Concatenate part meshes into one, offsetting face indices. No welding."""
    parts = list(parts)
    verts, faces, offset = [], [], 0
    for p in parts:
        verts.append(p.vertices)
        faces.append(p.faces + offset)
        offset += len(p.vertices)
    if not parts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


def convex_hull_mesh(points) -> TriMesh:
    """Outward-wound convex hull; empty mesh when the points are degenerate."""
    pts = _points(points)
    try:
        hull = ConvexHull(pts)
    except (QhullError, ValueError):
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    faces = hull.simplices.copy()
    tri = pts[faces]
    normal = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    outward = np.einsum("ij,ij->i", normal, hull.equations[:, :3]) >= 0
    faces[~outward] = faces[~outward][:, ::-1]
    used, inverse = np.unique(faces, return_inverse=True)
    return TriMesh(pts[used], inverse.reshape(-1, 3))


def voxelize_points(points, R: int = DEFAULT_RESOLUTION) -> VoxelGrid:
    """Solid occupancy of the convex hull of a point set (used for decoded parts)."""
    hull = convex_hull_mesh(points)
    if hull.is_empty:
        pts = _points(points)
        idx = np.floor((pts + 1.0) / (2.0 / R)).astype(np.int64)
        idx = idx[np.all((idx >= 0) & (idx < R), axis=1)]
        occ = np.zeros((R, R, R), dtype=bool)
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
        return VoxelGrid(occ, surface_only=True)
    return voxelize_solid(hull, R)


# --- mesh I/O -------------------------------------------------------------

def write_obj(path, mesh: TriMesh) -> None:
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
        except ValueError:
            raise ParseError(f"{path}: bad OBJ record on line {lineno}") from None
    return TriMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_ply(path, vertices, faces=None) -> None:
    """Binary little-endian PLY with double-precision vertices."""
    vertices = np.asarray(vertices, dtype="<f8").reshape(-1, 3)
    faces = None if faces is None else np.asarray(faces, dtype="<i4").reshape(-1, 3)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(vertices)}",
              "property double x", "property double y", "property double z"]
    if faces is not None:
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(vertices.tobytes())
        if faces is not None:
            rec = np.empty(len(faces), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
            rec["n"] = 3
            rec["idx"] = faces
            fh.write(rec.tobytes())


def read_ply(path):
    """Read a binary little-endian PLY. Returns (vertices, faces-or-None)."""
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise ParseError(f"{path}: not a PLY file", 0)
    body = raw.index(b"\n", end) + 1
    elements: list[list] = []
    for line in raw[:end].decode("ascii", "replace").splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "binary_little_endian":
            raise ParseError(f"{path}: only binary_little_endian PLY is supported")
        if tok[0] == "element":
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if tok[1] == "list":
                elements[-1][2].append((tok[4], "list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
            else:
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
    pos = body
    verts, faces = np.zeros((0, 3)), None
    for name, count, props in elements:
        if any(len(p) == 4 for p in props):
            if len(props) != 1:
                raise ParseError(f"{path}: mixed list/scalar element {name!r} unsupported", pos)
            _, _, ct, it = props[0]
            ctype, itype = np.dtype("<" + ct), np.dtype("<" + it)
            rows = []
            for _ in range(count):
                n = int(np.frombuffer(raw, ctype, 1, pos)[0])
                pos += ctype.itemsize
                rows.append(np.frombuffer(raw, itype, n, pos).astype(np.int64))
                pos += n * itype.itemsize
            if name == "face":
                tris = [[r[0], r[k], r[k + 1]] for r in rows for k in range(1, len(r) - 1)]
                faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
            continue
        dtype = np.dtype([(p[0], "<" + p[1]) for p in props])
        if pos + dtype.itemsize * count > len(raw):
            raise ParseError(f"{path}: truncated element {name!r}", pos)
        rec = np.frombuffer(raw, dtype, count, pos)
        pos += dtype.itemsize * count
        if name == "vertex":
            verts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    return verts, faces


def load_mesh(path) -> TriMesh:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return read_obj(path)
    v, f = read_ply(path)
    return TriMesh(v, f if f is not None else np.zeros((0, 3), dtype=np.int64))


def save_mesh(path, mesh: TriMesh) -> None:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        write_obj(path, mesh)
    else:
        write_ply(path, mesh.vertices, mesh.faces)


@dataclass
class MetricsReport:
    n_points: int = DEFAULT_SAMPLES
    resolution: int = DEFAULT_RESOLUTION
    tau: float = DEFAULT_TAU
    assets: dict = field(default_factory=dict)

    def add(self, asset_id: str, cd: float, fscore: float, part_iou: float, seeds: dict, **extra):
        self.assets[asset_id] = {"cd": cd, "f_score": fscore, "iou": part_iou, "seeds": seeds, **extra}

    def summary(self) -> dict:
        if not self.assets:
            return {"CD": None, "F-Score": None, "IoU": None, "count": 0}
        vals = list(self.assets.values())
        return {
            "CD": float(np.mean([v["cd"] for v in vals])),
            "F-Score": float(np.mean([v["f_score"] for v in vals])),
            "IoU": float(np.mean([v["iou"] for v in vals])),
            "count": len(vals),
        }

    def to_json(self) -> str:
        payload = {"n": self.n_points, "R": self.resolution, "tau": self.tau,
                   "summary": self.summary(), "assets": self.assets}
        return json.dumps(payload, indent=2, sort_keys=True)
