# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled geometry kernels. Signatures mirror ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, INFINITY

cnp.import_array()


cdef inline bint _inside(double w0, double w1, double w2) nogil:
    return (w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0) or (w0 <= 0.0 and w1 <= 0.0 and w2 <= 0.0)


def nn_distances(double[:, ::1] P, double[:, ::1] Q):
    """Exact Euclidean distance from every row of P to its nearest row of Q.

    Uniform grid over Q, searched in growing Chebyshev shells until no
    unvisited cell can hold a closer point.
    """
    cdef Py_ssize_t n = P.shape[0], m = Q.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    if n == 0:
        return out_arr
    cdef double lo[3]
    cdef double hi[3]
    cdef double h, ext, vol
    cdef int dims[3]
    cdef Py_ssize_t i, j, a
    for a in range(3):
        lo[a] = INFINITY
        hi[a] = -INFINITY
    for j in range(m):
        for a in range(3):
            if Q[j, a] < lo[a]:
                lo[a] = Q[j, a]
            if Q[j, a] > hi[a]:
                hi[a] = Q[j, a]
    ext = 0.0
    for a in range(3):
        if hi[a] - lo[a] > ext:
            ext = hi[a] - lo[a]
    if ext <= 0.0:
        ext = 1.0
    vol = 1.0
    for a in range(3):
        vol *= max(hi[a] - lo[a], ext * 1e-3)
    h = (vol / max(m, 1)) ** (1.0 / 3.0) * 1.5
    if h <= 0.0:
        h = ext
    for a in range(3):
        dims[a] = <int>min(max(<int>((hi[a] - lo[a]) / h) + 1, 1), 128)

    cdef Py_ssize_t ncell = <Py_ssize_t>dims[0] * dims[1] * dims[2]
    cell_of_arr = np.empty(m, dtype=np.int64)
    cdef long long[::1] cell_of = cell_of_arr
    start_arr = np.zeros(ncell + 1, dtype=np.int64)
    cdef long long[::1] start = start_arr
    order_arr = np.empty(m, dtype=np.int64)
    cdef long long[::1] order = order_arr
    cdef int c0, c1, c2
    cdef long long cid
    for j in range(m):
        c0 = <int>min(max(<int>floor((Q[j, 0] - lo[0]) / h), 0), dims[0] - 1)
        c1 = <int>min(max(<int>floor((Q[j, 1] - lo[1]) / h), 0), dims[1] - 1)
        c2 = <int>min(max(<int>floor((Q[j, 2] - lo[2]) / h), 0), dims[2] - 1)
        cid = (<long long>c0 * dims[1] + c1) * dims[2] + c2
        cell_of[j] = cid
        start[cid + 1] += 1
    for i in range(ncell):
        start[i + 1] += start[i]
    fill_arr = start_arr[:-1].copy()
    cdef long long[::1] fill = fill_arr
    for j in range(m):
        cid = cell_of[j]
        order[fill[cid]] = j
        fill[cid] += 1

    cdef double px, py, pz, dx, dy, dz, d2, best, bound, face
    cdef int pc[3]
    cdef int r, x0, x1, y0, y1, z0, z1, cx, cy, cz, maxr
    cdef long long s, e, q
    cdef bint covered
    maxr = max(dims[0], max(dims[1], dims[2]))
    for i in range(n):
        px = P[i, 0]
        py = P[i, 1]
        pz = P[i, 2]
        pc[0] = <int>min(max(<int>floor((px - lo[0]) / h), 0), dims[0] - 1)
        pc[1] = <int>min(max(<int>floor((py - lo[1]) / h), 0), dims[1] - 1)
        pc[2] = <int>min(max(<int>floor((pz - lo[2]) / h), 0), dims[2] - 1)
        best = INFINITY
        r = 0
        while True:
            x0 = max(pc[0] - r, 0)
            x1 = min(pc[0] + r, dims[0] - 1)
            y0 = max(pc[1] - r, 0)
            y1 = min(pc[1] + r, dims[1] - 1)
            z0 = max(pc[2] - r, 0)
            z1 = min(pc[2] + r, dims[2] - 1)
            for cx in range(x0, x1 + 1):
                for cy in range(y0, y1 + 1):
                    for cz in range(z0, z1 + 1):
                        if r > 0 and cx != pc[0] - r and cx != pc[0] + r and cy != pc[1] - r \
                                and cy != pc[1] + r and cz != pc[2] - r and cz != pc[2] + r:
                            continue
                        cid = (<long long>cx * dims[1] + cy) * dims[2] + cz
                        s = start[cid]
                        e = start[cid + 1]
                        for q in range(s, e):
                            j = order[q]
                            dx = px - Q[j, 0]
                            dy = py - Q[j, 1]
                            dz = pz - Q[j, 2]
                            d2 = dx * dx + dy * dy + dz * dz
                            if d2 < best:
                                best = d2
            covered = x0 == 0 and y0 == 0 and z0 == 0 and x1 == dims[0] - 1 \
                and y1 == dims[1] - 1 and z1 == dims[2] - 1
            if covered or r > maxr:
                break
            # distance from p to the nearest face of the searched block that
            # still has unsearched cells beyond it
            bound = INFINITY
            if x0 > 0:
                face = px - (lo[0] + x0 * h)
                bound = min(bound, face)
            if x1 < dims[0] - 1:
                face = (lo[0] + (x1 + 1) * h) - px
                bound = min(bound, face)
            if y0 > 0:
                face = py - (lo[1] + y0 * h)
                bound = min(bound, face)
            if y1 < dims[1] - 1:
                face = (lo[1] + (y1 + 1) * h) - py
                bound = min(bound, face)
            if z0 > 0:
                face = pz - (lo[2] + z0 * h)
                bound = min(bound, face)
            if z1 < dims[2] - 1:
                face = (lo[2] + (z1 + 1) * h) - pz
                bound = min(bound, face)
            if bound > 0.0 and best <= bound * bound:
                break
            r += 1
        out[i] = sqrt(best)
    return out_arr


def voxelize_parity(double[:, :, ::1] tris, int R, double jy, double jz):
    """Parity toggles for +x rays through the (jittered) voxel centres.

    Entry [i, j, k] flips once for every crossing lying between the centres of
    voxels i-1 and i; the caller XOR-accumulates along x to get occupancy.
    """
    cdef double pitch = 2.0 / R
    toggle_arr = np.zeros((R + 1, R, R), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] toggle = toggle_arr
    cdef Py_ssize_t f, nf = tris.shape[0]
    cdef double ax, ay, az, bx, by, bz, cx, cy, cz, area2, py, pz, w0, w1, w2, x, ymin, ymax, zmin, zmax
    cdef int j0, j1, k0, k1, j, k, i0
    for f in range(nf):
        ax = tris[f, 0, 0]; ay = tris[f, 0, 1]; az = tris[f, 0, 2]
        bx = tris[f, 1, 0]; by = tris[f, 1, 1]; bz = tris[f, 1, 2]
        cx = tris[f, 2, 0]; cy = tris[f, 2, 1]; cz = tris[f, 2, 2]
        area2 = (by - ay) * (cz - az) - (bz - az) * (cy - ay)
        if area2 == 0.0:
            continue
        ymin = min(ay, min(by, cy)); ymax = max(ay, max(by, cy))
        zmin = min(az, min(bz, cz)); zmax = max(az, max(bz, cz))
        j0 = max(<int>floor((ymin - jy + 1.0) / pitch - 0.5), 0)
        j1 = min(<int>floor((ymax - jy + 1.0) / pitch - 0.5) + 1, R - 1)
        k0 = max(<int>floor((zmin - jz + 1.0) / pitch - 0.5), 0)
        k1 = min(<int>floor((zmax - jz + 1.0) / pitch - 0.5) + 1, R - 1)
        for j in range(j0, j1 + 1):
            py = -1.0 + (j + 0.5) * pitch + jy
            for k in range(k0, k1 + 1):
                pz = -1.0 + (k + 0.5) * pitch + jz
                w0 = (cy - by) * (pz - bz) - (cz - bz) * (py - by)
                w1 = (ay - cy) * (pz - cz) - (az - cz) * (py - cy)
                w2 = (by - ay) * (pz - az) - (bz - az) * (py - ay)
                if not _inside(w0, w1, w2):
                    continue
                x = (w0 * ax + w1 * bx + w2 * cx) / area2
                i0 = <int>floor((x + 1.0) / pitch - 0.5) + 1
                if i0 < 0:
                    i0 = 0
                if i0 < R:
                    toggle[i0, j, k] ^= 1
    return toggle_arr


def raster_triangles(double[:, :, ::1] tris, int res):
    """Coverage of pixel centres over [-1, 1]^2 by 2-D triangles; uint8 (res, res) [row=y, col=x]."""
    cdef double pitch = 2.0 / res
    img_arr = np.zeros((res, res), dtype=np.uint8)
    cdef unsigned char[:, ::1] img = img_arr
    cdef Py_ssize_t f, nf = tris.shape[0]
    cdef double ax, ay, bx, by, cx, cy, area2, px, py, w0, w1, w2
    cdef int r0, r1, c0, c1, r, c
    for f in range(nf):
        ax = tris[f, 0, 0]; ay = tris[f, 0, 1]
        bx = tris[f, 1, 0]; by = tris[f, 1, 1]
        cx = tris[f, 2, 0]; cy = tris[f, 2, 1]
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area2 == 0.0:
            continue
        c0 = max(<int>floor((min(ax, min(bx, cx)) + 1.0) / pitch - 0.5), 0)
        c1 = min(<int>floor((max(ax, max(bx, cx)) + 1.0) / pitch - 0.5) + 1, res - 1)
        r0 = max(<int>floor((min(ay, min(by, cy)) + 1.0) / pitch - 0.5), 0)
        r1 = min(<int>floor((max(ay, max(by, cy)) + 1.0) / pitch - 0.5) + 1, res - 1)
        for r in range(r0, r1 + 1):
            py = -1.0 + (r + 0.5) * pitch
            for c in range(c0, c1 + 1):
                if img[r, c]:
                    continue
                px = -1.0 + (c + 0.5) * pitch
                w0 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                w1 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                w2 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                if _inside(w0, w1, w2):
                    img[r, c] = 1
    return img_arr
