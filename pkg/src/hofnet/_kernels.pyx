# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tracing kernel for grid fields.

Scalar per-particle version of the lockstep reference in ``_kernels_py``;
the operation order of every floating-point expression matches that module
so both backends emit identical trajectories.  See its docstring for the
shared conventions.
"""

from libc.math cimport floor

import numpy as np

cimport numpy as cnp


cdef inline void _sample(const double[:, :, :, ::1] data,
                         double ox, double oy, double oz,
                         double sx, double sy, double sz,
                         double x, double y, double z,
                         double* vx, double* vy, double* vz) noexcept nogil:
    cdef Py_ssize_t nx = data.shape[0]
    cdef Py_ssize_t ny = data.shape[1]
    cdef Py_ssize_t nz = data.shape[2]
    cdef double gx = (x - ox) / sx
    cdef double gy = (y - oy) / sy
    cdef double gz = (z - oz) / sz
    cdef Py_ssize_t i = <Py_ssize_t>floor(gx)
    cdef Py_ssize_t j = <Py_ssize_t>floor(gy)
    cdef Py_ssize_t k = <Py_ssize_t>floor(gz)
    if i < 0:
        i = 0
    if i > nx - 2:
        i = nx - 2
    if j < 0:
        j = 0
    if j > ny - 2:
        j = ny - 2
    if k < 0:
        k = 0
    if k > nz - 2:
        k = nz - 2
    cdef double fx = gx - i
    cdef double fy = gy - j
    cdef double fz = gz - k
    cdef double c00, c10, c01, c11, c0, c1
    cdef Py_ssize_t c
    cdef double out[3]
    for c in range(3):
        c00 = data[i, j, k, c] + (data[i + 1, j, k, c] - data[i, j, k, c]) * fx
        c10 = data[i, j + 1, k, c] + (data[i + 1, j + 1, k, c] - data[i, j + 1, k, c]) * fx
        c01 = data[i, j, k + 1, c] + (data[i + 1, j, k + 1, c] - data[i, j, k + 1, c]) * fx
        c11 = data[i, j + 1, k + 1, c] + (data[i + 1, j + 1, k + 1, c] - data[i, j + 1, k + 1, c]) * fx
        c0 = c00 + (c10 - c00) * fy
        c1 = c01 + (c11 - c01) * fy
        out[c] = c0 + (c1 - c0) * fz
    vx[0] = out[0]
    vy[0] = out[1]
    vz[0] = out[2]


cdef inline bint _oob(double x, double y, double z,
                      double lox, double loy, double loz,
                      double hix, double hiy, double hiz) noexcept nogil:
    return (x < lox or x > hix or y < loy or y > hiy or z < loz or z > hiz)


cdef inline long _block(double x, double y, double z,
                        double blox, double bloy, double bloz,
                        double bextx, double bexty, double bextz,
                        double nbxf, double nbyf, double nbzf,
                        long nbx, long nby, long nbz) noexcept nogil:
    cdef long ix = <long>floor((x - blox) / bextx * nbxf)
    cdef long iy = <long>floor((y - bloy) / bexty * nbyf)
    cdef long iz = <long>floor((z - bloz) / bextz * nbzf)
    if ix > nbx - 1:
        ix = nbx - 1
    if iy > nby - 1:
        iy = nby - 1
    if iz > nbz - 1:
        iz = nbz - 1
    return ix + nbx * (iy + nby * iz)


def trace_grid_blocks_chunk(const double[:, :, :, ::1] data,
                            double ox, double oy, double oz,
                            double sx, double sy, double sz,
                            double blox, double bloy, double bloz,
                            double bextx, double bexty, double bextz,
                            long nbx, long nby, long nbz,
                            const double[:, ::1] seeds,
                            double h, long max_steps, double zero_tol,
                            cnp.int32_t[:, ::1] out_blocks,
                            cnp.int64_t[::1] out_lens,
                            cnp.int8_t[::1] out_terms):
    """Trace one chunk of seeds, writing deduplicated block ids per seed.

    ``out_blocks`` must have at least ``max_steps + 1`` columns.  Returns
    nothing; per-seed sequence lengths land in ``out_lens`` and termination
    codes (0 max-steps, 1 out-of-bounds, 2 zero-velocity) in ``out_terms``.
    """
    cdef Py_ssize_t n = seeds.shape[0]
    cdef double lox = ox, loy = oy, loz = oz
    cdef double hix = ox + (<double>(data.shape[0] - 1)) * sx
    cdef double hiy = oy + (<double>(data.shape[1] - 1)) * sy
    cdef double hiz = oz + (<double>(data.shape[2] - 1)) * sz
    cdef double nbxf = <double>nbx, nbyf = <double>nby, nbzf = <double>nbz
    cdef double hh = 0.5 * h
    cdef double h6 = h / 6.0
    cdef double tol2 = zero_tol * zero_tol
    cdef Py_ssize_t p
    cdef long step, m, blk, last
    cdef signed char term
    cdef double px, py, pz
    cdef double k1x, k1y, k1z, k2x, k2y, k2z, k3x, k3y, k3z, k4x, k4y, k4z
    cdef double qx, qy, qz, pnx, pny, pnz

    with nogil:
        for p in range(n):
            px = seeds[p, 0]
            py = seeds[p, 1]
            pz = seeds[p, 2]
            last = _block(px, py, pz, blox, bloy, bloz, bextx, bexty, bextz,
                          nbxf, nbyf, nbzf, nbx, nby, nbz)
            out_blocks[p, 0] = <cnp.int32_t>last
            m = 1
            term = 0  # max-steps unless something else happens
            for step in range(max_steps):
                _sample(data, ox, oy, oz, sx, sy, sz, px, py, pz, &k1x, &k1y, &k1z)
                if (k1x * k1x + k1y * k1y + k1z * k1z) < tol2:
                    term = 2
                    break
                qx = px + hh * k1x
                qy = py + hh * k1y
                qz = pz + hh * k1z
                if _oob(qx, qy, qz, lox, loy, loz, hix, hiy, hiz):
                    term = 1
                    break
                _sample(data, ox, oy, oz, sx, sy, sz, qx, qy, qz, &k2x, &k2y, &k2z)
                qx = px + hh * k2x
                qy = py + hh * k2y
                qz = pz + hh * k2z
                if _oob(qx, qy, qz, lox, loy, loz, hix, hiy, hiz):
                    term = 1
                    break
                _sample(data, ox, oy, oz, sx, sy, sz, qx, qy, qz, &k3x, &k3y, &k3z)
                qx = px + h * k3x
                qy = py + h * k3y
                qz = pz + h * k3z
                if _oob(qx, qy, qz, lox, loy, loz, hix, hiy, hiz):
                    term = 1
                    break
                _sample(data, ox, oy, oz, sx, sy, sz, qx, qy, qz, &k4x, &k4y, &k4z)
                pnx = px + h6 * (((k1x + 2.0 * k2x) + 2.0 * k3x) + k4x)
                pny = py + h6 * (((k1y + 2.0 * k2y) + 2.0 * k3y) + k4y)
                pnz = pz + h6 * (((k1z + 2.0 * k2z) + 2.0 * k3z) + k4z)
                if _oob(pnx, pny, pnz, lox, loy, loz, hix, hiy, hiz):
                    term = 1
                    break
                px = pnx
                py = pny
                pz = pnz
                blk = _block(px, py, pz, blox, bloy, bloz, bextx, bexty, bextz,
                             nbxf, nbyf, nbzf, nbx, nby, nbz)
                if blk != last:
                    out_blocks[p, m] = <cnp.int32_t>blk
                    m += 1
                    last = blk
            out_lens[p] = m
            out_terms[p] = term
