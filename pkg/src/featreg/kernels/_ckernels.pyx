# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: trilinear warping, fused SSD energy/gradient and
SSD cost volumes. Semantics mirror numpy_backend exactly (float64
arithmetic, same clamping and derivative conventions)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline double _clampd(double v, double lo, double hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef inline Py_ssize_t _cell(double pc, Py_ssize_t n) nogil:
    cdef Py_ssize_t i = <Py_ssize_t>floor(pc)
    if i > n - 2:
        i = n - 2
    if i < 0:
        i = 0
    return i


def warp_trilinear(const float[:, :, :, ::1] vol, const float[:, :, :, ::1] field):
    """Backward-warp: out[x] = vol sampled trilinearly at x + field(x)."""
    cdef Py_ssize_t X = vol.shape[0], Y = vol.shape[1], Z = vol.shape[2], C = vol.shape[3]
    out_arr = np.empty((X, Y, Z, C), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t x, y, z, c, ix0, iy0, iz0, ix1, iy1, iz1
    cdef double px, py, pz, fx, fy, fz, gx, gy, gz, v
    with nogil:
        for x in range(X):
            for y in range(Y):
                for z in range(Z):
                    px = _clampd(x + <double>field[x, y, z, 0], 0.0, X - 1.0)
                    py = _clampd(y + <double>field[x, y, z, 1], 0.0, Y - 1.0)
                    pz = _clampd(z + <double>field[x, y, z, 2], 0.0, Z - 1.0)
                    ix0 = _cell(px, X); iy0 = _cell(py, Y); iz0 = _cell(pz, Z)
                    ix1 = ix0 + 1 if X > 1 else ix0
                    iy1 = iy0 + 1 if Y > 1 else iy0
                    iz1 = iz0 + 1 if Z > 1 else iz0
                    fx = px - ix0; fy = py - iy0; fz = pz - iz0
                    gx = 1.0 - fx; gy = 1.0 - fy; gz = 1.0 - fz
                    for c in range(C):
                        v = (gx * gy * gz * vol[ix0, iy0, iz0, c]
                             + fx * gy * gz * vol[ix1, iy0, iz0, c]
                             + gx * fy * gz * vol[ix0, iy1, iz0, c]
                             + fx * fy * gz * vol[ix1, iy1, iz0, c]
                             + gx * gy * fz * vol[ix0, iy0, iz1, c]
                             + fx * gy * fz * vol[ix1, iy0, iz1, c]
                             + gx * fy * fz * vol[ix0, iy1, iz1, c]
                             + fx * fy * fz * vol[ix1, iy1, iz1, c])
                        out[x, y, z, c] = <float>v
    return out_arr


def ssd_energy_gradient(const float[:, :, :, ::1] ref,
                        const float[:, :, :, ::1] mov,
                        const float[:, :, :, ::1] field):
    """Mean-SSD data term and its float64 gradient w.r.t. the field."""
    cdef Py_ssize_t X = ref.shape[0], Y = ref.shape[1], Z = ref.shape[2], C = ref.shape[3]
    grad_arr = np.empty((X, Y, Z, 3), dtype=np.float64)
    cdef double[:, :, :, ::1] grad = grad_arr
    cdef Py_ssize_t x, y, z, c, ix0, iy0, iz0, ix1, iy1, iz1
    cdef double px, py, pz, pcx, pcy, pcz, fx, fy, fz, gx, gy, gz
    cdef double c000, c100, c010, c110, c001, c101, c011, c111
    cdef double s, r, acc, gxx, gyy, gzz, ax, ay, az
    cdef double total = 0.0
    cdef double n = <double>(X * Y * Z * C)
    cdef double scale = 2.0 / n
    with nogil:
        for x in range(X):
            for y in range(Y):
                for z in range(Z):
                    px = x + <double>field[x, y, z, 0]
                    py = y + <double>field[x, y, z, 1]
                    pz = z + <double>field[x, y, z, 2]
                    ax = 1.0 if (px >= 0.0 and px < X - 1.0) else 0.0
                    ay = 1.0 if (py >= 0.0 and py < Y - 1.0) else 0.0
                    az = 1.0 if (pz >= 0.0 and pz < Z - 1.0) else 0.0
                    pcx = _clampd(px, 0.0, X - 1.0)
                    pcy = _clampd(py, 0.0, Y - 1.0)
                    pcz = _clampd(pz, 0.0, Z - 1.0)
                    ix0 = _cell(pcx, X); iy0 = _cell(pcy, Y); iz0 = _cell(pcz, Z)
                    ix1 = ix0 + 1 if X > 1 else ix0
                    iy1 = iy0 + 1 if Y > 1 else iy0
                    iz1 = iz0 + 1 if Z > 1 else iz0
                    fx = pcx - ix0; fy = pcy - iy0; fz = pcz - iz0
                    gx = 1.0 - fx; gy = 1.0 - fy; gz = 1.0 - fz
                    gxx = 0.0; gyy = 0.0; gzz = 0.0
                    for c in range(C):
                        c000 = mov[ix0, iy0, iz0, c]; c100 = mov[ix1, iy0, iz0, c]
                        c010 = mov[ix0, iy1, iz0, c]; c110 = mov[ix1, iy1, iz0, c]
                        c001 = mov[ix0, iy0, iz1, c]; c101 = mov[ix1, iy0, iz1, c]
                        c011 = mov[ix0, iy1, iz1, c]; c111 = mov[ix1, iy1, iz1, c]
                        s = (gx * gy * gz * c000 + fx * gy * gz * c100
                             + gx * fy * gz * c010 + fx * fy * gz * c110
                             + gx * gy * fz * c001 + fx * gy * fz * c101
                             + gx * fy * fz * c011 + fx * fy * fz * c111)
                        r = s - <double>ref[x, y, z, c]
                        total += r * r
                        gxx += r * ((c100 - c000) * gy * gz + (c110 - c010) * fy * gz
                                    + (c101 - c001) * gy * fz + (c111 - c011) * fy * fz)
                        gyy += r * ((c010 - c000) * gx * gz + (c110 - c100) * fx * gz
                                    + (c011 - c001) * gx * fz + (c111 - c101) * fx * fz)
                        gzz += r * ((c001 - c000) * gx * gy + (c101 - c100) * fx * gy
                                    + (c011 - c010) * gx * fy + (c111 - c110) * fx * fy)
                    grad[x, y, z, 0] = scale * gxx * ax
                    grad[x, y, z, 1] = scale * gyy * ay
                    grad[x, y, z, 2] = scale * gzz * az
    return total / n, grad_arr


def cost_volume_ssd(const float[:, :, :, ::1] ref,
                    const float[:, :, :, ::1] mov,
                    int g,
                    const long long[:, ::1] offsets):
    """Per-block mean SSD over integer displacement candidates.

    Returns float32 (Gx, Gy, Gz, L); edge-clamped moving samples,
    normalization by the actual block voxel count.
    """
    cdef Py_ssize_t X = ref.shape[0], Y = ref.shape[1], Z = ref.shape[2], C = ref.shape[3]
    cdef Py_ssize_t L = offsets.shape[0]
    cdef Py_ssize_t Gx = (X + g - 1) // g, Gy = (Y + g - 1) // g, Gz = (Z + g - 1) // g
    acc_arr = np.zeros((Gx, Gy, Gz, L), dtype=np.float64)
    cdef double[:, :, :, ::1] acc = acc_arr
    cdef Py_ssize_t l, x, y, z, c, sx, sy, sz
    cdef long long ox, oy, oz
    cdef double d, ssd
    with nogil:
        for l in range(L):
            ox = offsets[l, 0]; oy = offsets[l, 1]; oz = offsets[l, 2]
            for x in range(X):
                sx = x + ox
                if sx < 0: sx = 0
                if sx > X - 1: sx = X - 1
                for y in range(Y):
                    sy = y + oy
                    if sy < 0: sy = 0
                    if sy > Y - 1: sy = Y - 1
                    for z in range(Z):
                        sz = z + oz
                        if sz < 0: sz = 0
                        if sz > Z - 1: sz = Z - 1
                        ssd = 0.0
                        for c in range(C):
                            d = <double>ref[x, y, z, c] - <double>mov[sx, sy, sz, c]
                            ssd += d * d
                        acc[x // g, y // g, z // g, l] += ssd
    counts = np.ones((Gx, Gy, Gz, 1))
    for axis, (gd, dim) in enumerate(zip((Gx, Gy, Gz), (X, Y, Z))):
        sizes = np.minimum(np.arange(gd) * g + g, dim) - np.arange(gd) * g
        shape = [1, 1, 1, 1]
        shape[axis] = gd
        counts = counts * sizes.reshape(shape)
    return (acc_arr / counts).astype(np.float32)
