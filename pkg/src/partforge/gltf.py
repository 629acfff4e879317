"""Minimal GLTF 2.0 / GLB reader and writer for part mining.

A part is a mesh-bearing scene node. Its primitives are merged and placed in
world coordinates with the node's accumulated transform.
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, UnsupportedError
from .geometry import TriMesh

GLB_MAGIC = 0x46546C67  # b"glTF"
CHUNK_JSON = 0x4E4F534A
CHUNK_BIN = 0x004E4942

_COMPONENT = {5120: "i1", 5121: "u1", 5122: "i2", 5123: "u2", 5125: "u4", 5126: "f4"}
_NCOMP = {"SCALAR": 1, "VEC2": 2, "VEC3": 3, "VEC4": 4, "MAT2": 4, "MAT3": 9, "MAT4": 16}

MODE_POINTS, MODE_LINES, MODE_LINE_LOOP, MODE_LINE_STRIP = 0, 1, 2, 3
MODE_TRIANGLES, MODE_STRIP, MODE_FAN = 4, 5, 6


@dataclass
class GltfDocument:
    doc: dict
    buffers: list[bytes]

    @property
    def has_texture(self) -> bool:
        """True when any material carries a base-colour texture."""
        for mat in self.doc.get("materials", []):
            if "baseColorTexture" in mat.get("pbrMetallicRoughness", {}):
                return True
        return False


def _parse_glb(data: bytes) -> tuple[dict, bytes | None]:
    if len(data) < 12:
        raise ParseError("GLB header truncated", 0)
    magic, version, length = struct.unpack_from("<III", data, 0)
    if magic != GLB_MAGIC:
        raise ParseError("bad GLB magic", 0)
    if version != 2:
        raise UnsupportedError(f"GLB container version {version}")
    if length > len(data):
        raise ParseError(f"GLB declares {length} bytes but only {len(data)} present", 8)
    pos, doc, binary = 12, None, None
    while pos < length:
        if pos + 8 > length:
            raise ParseError("chunk header truncated", pos)
        clen, ctype = struct.unpack_from("<II", data, pos)
        body = pos + 8
        if body + clen > length:
            raise ParseError("chunk body runs past end of file", pos)
        chunk = data[body:body + clen]
        if ctype == CHUNK_JSON:
            try:
                doc = json.loads(chunk.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                off = body + getattr(exc, "pos", getattr(exc, "start", 0))
                raise ParseError(f"invalid JSON chunk: {exc}", off) from None
        elif ctype == CHUNK_BIN and binary is None:
            binary = chunk
        pos = body + clen
    if doc is None:
        raise ParseError("GLB has no JSON chunk", 12)
    return doc, binary


def load_gltf(data: bytes, base_dir: Path | None = None) -> GltfDocument:
    """Parse .glb bytes or .gltf JSON bytes into a document with resolved buffers."""
    if data[:4] == b"glTF":
        doc, binary = _parse_glb(data)
    else:
        try:
            doc = json.loads(data.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise ParseError("GLTF is not UTF-8", exc.start) from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid GLTF JSON: {exc.msg}", exc.pos) from None
        binary = None
    if not isinstance(doc, dict):
        raise ParseError("GLTF root is not an object", 0)
    required = doc.get("extensionsRequired") or []
    if required:
        raise UnsupportedError(f"required extensions not supported: {sorted(required)}")
    version = str(doc.get("asset", {}).get("version", ""))
    if not version.startswith("2"):
        raise UnsupportedError(f"GLTF asset version {version!r}")
    buffers = []
    for i, buf in enumerate(doc.get("buffers", [])):
        uri = buf.get("uri")
        if uri is None:
            if binary is None:
                raise ParseError(f"buffer {i} refers to a missing GLB BIN chunk")
            buffers.append(binary)
        elif uri.startswith("data:"):
            try:
                buffers.append(base64.b64decode(uri.split(",", 1)[1]))
            except (IndexError, ValueError):
                raise ParseError(f"buffer {i}: bad data URI") from None
        else:
            if base_dir is None:
                raise ParseError(f"buffer {i} references external file {uri!r} without a base directory")
            buffers.append((Path(base_dir) / uri).read_bytes())
    return GltfDocument(doc, buffers)


def _accessor(gd: GltfDocument, index: int) -> np.ndarray:
    doc = gd.doc
    try:
        acc = doc["accessors"][index]
    except (KeyError, IndexError):
        raise ParseError(f"accessor {index} does not exist") from None
    if "sparse" in acc:
        raise UnsupportedError("sparse accessors")
    ncomp = _NCOMP[acc["type"]]
    dtype = np.dtype("<" + _COMPONENT[acc["componentType"]])
    count = acc["count"]
    if "bufferView" not in acc:
        return np.zeros((count, ncomp), dtype=dtype)
    view = doc["bufferViews"][acc["bufferView"]]
    buf = gd.buffers[view["buffer"]]
    start = view.get("byteOffset", 0) + acc.get("byteOffset", 0)
    elem = dtype.itemsize * ncomp
    stride = view.get("byteStride") or elem
    need = start + stride * (count - 1) + elem if count else start
    if need > len(buf) or need > view.get("byteOffset", 0) + view["byteLength"]:
        raise ParseError(f"accessor {index} reads past its buffer view", start)
    if stride == elem:
        out = np.frombuffer(buf, dtype, count * ncomp, start).reshape(count, ncomp)
    else:
        rows = [np.frombuffer(buf, dtype, ncomp, start + i * stride) for i in range(count)]
        out = np.stack(rows) if rows else np.zeros((0, ncomp), dtype)
    return out


def _triangulate(indices: np.ndarray, mode: int) -> np.ndarray:
    if mode == MODE_TRIANGLES:
        return indices[: len(indices) // 3 * 3].reshape(-1, 3)
    if mode == MODE_STRIP:
        tris = []
        for i in range(len(indices) - 2):
            a, b, c = indices[i], indices[i + 1], indices[i + 2]
            tris.append((a, b, c) if i % 2 == 0 else (b, a, c))
        return np.array(tris, dtype=np.int64).reshape(-1, 3)
    if mode == MODE_FAN:
        return np.array([(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)],
                        dtype=np.int64).reshape(-1, 3)
    raise UnsupportedError(f"primitive mode {mode}")


def node_matrix(node: dict) -> np.ndarray:
    """Local 4x4 transform of a node (column-major ``matrix`` or T * R * S)."""
    if "matrix" in node:
        return np.asarray(node["matrix"], dtype=np.float64).reshape(4, 4).T
    t = np.asarray(node.get("translation", [0, 0, 0]), dtype=np.float64)
    x, y, z, w = np.asarray(node.get("rotation", [0, 0, 0, 1]), dtype=np.float64)
    s = np.asarray(node.get("scale", [1, 1, 1]), dtype=np.float64)
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    m = np.eye(4)
    m[:3, :3] = rot * s[None, :]
    m[:3, 3] = t
    return m


def _mesh_geometry(gd: GltfDocument, mesh_index: int, non_triangle: str) -> TriMesh:
    verts, faces, offset = [], [], 0
    for prim in gd.doc["meshes"][mesh_index].get("primitives", []):
        mode = prim.get("mode", MODE_TRIANGLES)
        if mode not in (MODE_TRIANGLES, MODE_STRIP, MODE_FAN):
            if non_triangle == "reject":
                raise UnsupportedError(f"mesh {mesh_index}: non-surface primitive mode {mode}")
            continue
        if "POSITION" not in prim.get("attributes", {}):
            raise ParseError(f"mesh {mesh_index}: primitive without POSITION")
        pos = _accessor(gd, prim["attributes"]["POSITION"]).astype(np.float64)
        if pos.shape[1] != 3:
            raise ParseError(f"mesh {mesh_index}: POSITION is not VEC3")
        if "indices" in prim:
            idx = _accessor(gd, prim["indices"]).reshape(-1).astype(np.int64)
        else:
            idx = np.arange(len(pos), dtype=np.int64)
        if idx.size and idx.max() >= len(pos):
            raise ParseError(f"mesh {mesh_index}: index {int(idx.max())} out of range")
        tri = _triangulate(idx, mode)
        verts.append(pos)
        faces.append(tri + offset)
        offset += len(pos)
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


def extract_parts(data: bytes, base_dir: Path | None = None, non_triangle: str = "skip",
                  split_components: bool = False) -> list[tuple[str, TriMesh]]:
    """One (name, world-space mesh) per mesh-bearing node, in traversal order.

    ``non_triangle`` is "skip" or "reject" for point/line primitives.
    ``split_components`` additionally splits each part into connected components.
    """
    gd = data if isinstance(data, GltfDocument) else load_gltf(data, base_dir)
    return extract_parts_from(gd, non_triangle=non_triangle, split_components=split_components)


def extract_parts_from(gd: GltfDocument, non_triangle: str = "skip",
                       split_components: bool = False) -> list[tuple[str, TriMesh]]:
    doc = gd.doc
    nodes = doc.get("nodes", [])
    scenes = doc.get("scenes")
    if scenes:
        roots = scenes[doc.get("scene", 0)].get("nodes", [])
    else:
        children = {c for n in nodes for c in n.get("children", [])}
        roots = [i for i in range(len(nodes)) if i not in children]
    parts: list[tuple[str, TriMesh]] = []
    stack = [(r, np.eye(4), 0) for r in reversed(roots)]
    while stack:
        idx, parent, depth = stack.pop()
        if depth > len(nodes):
            raise ParseError("node hierarchy contains a cycle")
        try:
            node = nodes[idx]
        except IndexError:
            raise ParseError(f"node {idx} does not exist") from None
        world = parent @ node_matrix(node)
        if "mesh" in node:
            mesh = _mesh_geometry(gd, node["mesh"], non_triangle)
            if not mesh.is_empty:
                v = mesh.vertices @ world[:3, :3].T + world[:3, 3]
                placed = TriMesh(v, mesh.faces)
                if np.linalg.det(world[:3, :3]) < 0:
                    placed = TriMesh(v, mesh.faces[:, ::-1])
                name = node.get("name") or doc["meshes"][node["mesh"]].get("name") or f"node_{idx}"
                if split_components:
                    comps = connected_components(placed)
                    parts.extend((f"{name}#{k}" if len(comps) > 1 else name, c) for k, c in enumerate(comps))
                else:
                    parts.append((name, placed))
        for child in reversed(node.get("children", [])):
            stack.append((child, world, depth + 1))
    return parts


def connected_components(mesh: TriMesh) -> list[TriMesh]:
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components as cc

    f = mesh.faces
    n = len(mesh.vertices)
    rows = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
    cols = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    ncomp, labels = cc(coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)), directed=False)
    out = []
    for k in range(ncomp):
        sel = labels[f[:, 0]] == k
        if not sel.any():
            continue
        used, inv = np.unique(f[sel], return_inverse=True)
        out.append(TriMesh(mesh.vertices[used], inv.reshape(-1, 3)))
    return out


# --- writer ---------------------------------------------------------------

@dataclass
class NodeSpec:
    """Scene node for :func:`build_glb`. ``mesh`` indexes the mesh list, or None."""
    name: str
    mesh: int | None = None
    translation: tuple | None = None
    rotation: tuple | None = None
    scale: tuple | None = None
    matrix: tuple | None = None
    children: tuple = ()


def build_glb(meshes: list[TriMesh], nodes: list[NodeSpec] | None = None, roots=None,
              textured: bool = False, extensions_required=None) -> bytes:
    """Serialize meshes into a GLB container.

    Without ``nodes`` each mesh gets one root node named ``part_{i}``.
    """
    if nodes is None:
        nodes = [NodeSpec(f"part_{i}", mesh=i) for i in range(len(meshes))]
    if roots is None:
        children = {c for n in nodes for c in n.children}
        roots = [i for i in range(len(nodes)) if i not in children]
    blob = bytearray()
    views, accessors, gl_meshes = [], [], []
    for i, m in enumerate(meshes):
        pos = np.asarray(m.vertices, dtype="<f4")
        idx = np.asarray(m.faces, dtype="<u4").reshape(-1)
        for arr, target in ((pos, 34962), (idx, 34963)):
            while len(blob) % 4:
                blob.append(0)
            views.append({"buffer": 0, "byteOffset": len(blob), "byteLength": arr.nbytes, "target": target})
            blob.extend(arr.tobytes())
        accessors.append({"bufferView": 2 * i, "componentType": 5126, "count": len(pos), "type": "VEC3",
                          "min": pos.min(axis=0).tolist(), "max": pos.max(axis=0).tolist()})
        accessors.append({"bufferView": 2 * i + 1, "componentType": 5125, "count": int(idx.size),
                          "type": "SCALAR"})
        prim = {"attributes": {"POSITION": 2 * i}, "indices": 2 * i + 1, "mode": 4}
        if textured:
            prim["material"] = 0
        gl_meshes.append({"name": f"mesh_{i}", "primitives": [prim]})
    gl_nodes = []
    for n in nodes:
        d = {"name": n.name}
        if n.mesh is not None:
            d["mesh"] = n.mesh
        for key in ("translation", "rotation", "scale", "matrix"):
            val = getattr(n, key)
            if val is not None:
                d[key] = [float(v) for v in val]
        if n.children:
            d["children"] = list(n.children)
        gl_nodes.append(d)
    while len(blob) % 4:
        blob.append(0)
    doc = {
        "asset": {"version": "2.0", "generator": "partforge"},
        "scene": 0,
        "scenes": [{"nodes": list(roots)}],
        "nodes": gl_nodes,
        "meshes": gl_meshes,
        "accessors": accessors,
        "bufferViews": views,
        "buffers": [{"byteLength": len(blob)}],
    }
    if textured:
        png = base64.b64encode(b"\x89PNG\r\n\x1a\n").decode("ascii")
        doc["images"] = [{"uri": "data:image/png;base64," + png}]
        doc["textures"] = [{"source": 0}]
        doc["materials"] = [{"pbrMetallicRoughness": {"baseColorTexture": {"index": 0}}}]
    if extensions_required:
        doc["extensionsUsed"] = list(extensions_required)
        doc["extensionsRequired"] = list(extensions_required)
    js = json.dumps(doc, separators=(",", ":"), sort_keys=True).encode("utf-8")
    js += b" " * (-len(js) % 4)
    total = 12 + 8 + len(js) + 8 + len(blob)
    out = bytearray(struct.pack("<III", GLB_MAGIC, 2, total))
    out += struct.pack("<II", len(js), CHUNK_JSON) + js
    out += struct.pack("<II", len(blob), CHUNK_BIN) + bytes(blob)
    return bytes(out)
