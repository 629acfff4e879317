"""Pure-Python fallbacks for the compiled kernels in ``_kernels.pyx``."""

import numpy as np
from scipy.spatial import cKDTree


def nn_distances(P, Q):
    if len(P) == 0:
        return np.empty(0)
    d, _ = cKDTree(Q).query(P, k=1)
    return np.asarray(d, dtype=np.float64)


def _inside(w0, w1, w2):
    return ((w0 >= 0) & (w1 >= 0) & (w2 >= 0)) | ((w0 <= 0) & (w1 <= 0) & (w2 <= 0))


def voxelize_parity(tris, R, jy, jz):
    pitch = 2.0 / R
    toggle = np.zeros((R + 1, R, R), dtype=np.uint8)
    for a, b, c in tris:
        ax, ay, az = a
        bx, by, bz = b
        cx, cy, cz = c
        area2 = (by - ay) * (cz - az) - (bz - az) * (cy - ay)
        if area2 == 0.0:
            continue
        j0 = max(int(np.floor((min(ay, by, cy) - jy + 1.0) / pitch - 0.5)), 0)
        j1 = min(int(np.floor((max(ay, by, cy) - jy + 1.0) / pitch - 0.5)) + 1, R - 1)
        k0 = max(int(np.floor((min(az, bz, cz) - jz + 1.0) / pitch - 0.5)), 0)
        k1 = min(int(np.floor((max(az, bz, cz) - jz + 1.0) / pitch - 0.5)) + 1, R - 1)
        if j1 < j0 or k1 < k0:
            continue
        j, k = np.meshgrid(np.arange(j0, j1 + 1), np.arange(k0, k1 + 1), indexing="ij")
        py = -1.0 + (j + 0.5) * pitch + jy
        pz = -1.0 + (k + 0.5) * pitch + jz
        w0 = (cy - by) * (pz - bz) - (cz - bz) * (py - by)
        w1 = (ay - cy) * (pz - cz) - (az - cz) * (py - cy)
        w2 = (by - ay) * (pz - az) - (bz - az) * (py - ay)
        hit = _inside(w0, w1, w2)
        if not hit.any():
            continue
        x = (w0[hit] * ax + w1[hit] * bx + w2[hit] * cx) / area2
        i0 = np.maximum(np.floor((x + 1.0) / pitch - 0.5).astype(np.int64) + 1, 0)
        keep = i0 < R
        np.bitwise_xor.at(toggle, (i0[keep], j[hit][keep], k[hit][keep]), 1)
    return toggle


def raster_triangles(tris, res):
    pitch = 2.0 / res
    img = np.zeros((res, res), dtype=np.uint8)
    for a, b, c in tris:
        ax, ay = a
        bx, by = b
        cx, cy = c
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area2 == 0.0:
            continue
        c0 = max(int(np.floor((min(ax, bx, cx) + 1.0) / pitch - 0.5)), 0)
        c1 = min(int(np.floor((max(ax, bx, cx) + 1.0) / pitch - 0.5)) + 1, res - 1)
        r0 = max(int(np.floor((min(ay, by, cy) + 1.0) / pitch - 0.5)), 0)
        r1 = min(int(np.floor((max(ay, by, cy) + 1.0) / pitch - 0.5)) + 1, res - 1)
        if r1 < r0 or c1 < c0:
            continue
        r, col = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
        py = -1.0 + (r + 0.5) * pitch
        px = -1.0 + (col + 0.5) * pitch
        w0 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
        w1 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
        w2 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        img[r0:r1 + 1, c0:c1 + 1] |= _inside(w0, w1, w2).astype(np.uint8)
    return img
