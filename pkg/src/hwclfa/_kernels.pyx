# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; semantics match ``_kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, floor

cnp.import_array()


def stamp_discs(double[:, :, ::1] canvas, xs, ys, radii, colors):
    cdef double[::1] X = np.ascontiguousarray(xs, dtype=np.float64)
    cdef double[::1] Y = np.ascontiguousarray(ys, dtype=np.float64)
    cdef double[::1] R = np.ascontiguousarray(radii, dtype=np.float64)
    cdef double[:, ::1] C = np.ascontiguousarray(colors, dtype=np.float64)
    cdef Py_ssize_t h = canvas.shape[0], w = canvas.shape[1]
    cdef Py_ssize_t i, r, c, r0, r1, c0, c1, ch
    cdef double x, y, rad, dx, dy, r2
    for i in range(X.shape[0]):
        x = X[i]
        y = Y[i]
        rad = R[i]
        r2 = rad * rad
        r0 = <Py_ssize_t>floor(y - rad)
        r1 = <Py_ssize_t>ceil(y + rad)
        c0 = <Py_ssize_t>floor(x - rad)
        c1 = <Py_ssize_t>ceil(x + rad)
        if r0 < 0:
            r0 = 0
        if c0 < 0:
            c0 = 0
        if r1 > h - 1:
            r1 = h - 1
        if c1 > w - 1:
            c1 = w - 1
        for r in range(r0, r1 + 1):
            dy = r - y
            for c in range(c0, c1 + 1):
                dx = c - x
                if dx * dx + dy * dy <= r2:
                    for ch in range(3):
                        if C[i, ch] > canvas[r, c, ch]:
                            canvas[r, c, ch] = C[i, ch]
    return np.asarray(canvas)


def dwconv1d_forward(x, kernels):
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] K = np.ascontiguousarray(kernels, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0], t = X.shape[1], k = K.shape[1]
    cdef Py_ssize_t h = k // 2
    out = np.zeros((n, t), dtype=np.float64)
    cdef double[:, ::1] O = out
    cdef Py_ssize_t i, c, j, src
    for i in range(n):
        for j in range(k):
            src = i + j - h
            if src < 0 or src >= n:
                continue
            for c in range(t):
                O[i, c] += K[c, j] * X[src, c]
    return out


def dwconv1d_backward(x, kernels, grad_out):
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] K = np.ascontiguousarray(kernels, dtype=np.float64)
    cdef double[:, ::1] G = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0], t = X.shape[1], k = K.shape[1]
    cdef Py_ssize_t h = k // 2
    dx = np.zeros((n, t), dtype=np.float64)
    dk = np.zeros((t, k), dtype=np.float64)
    cdef double[:, ::1] DX = dx
    cdef double[:, ::1] DK = dk
    cdef Py_ssize_t i, c, j, src
    for i in range(n):
        for j in range(k):
            src = i + j - h
            if src < 0 or src >= n:
                continue
            for c in range(t):
                DK[c, j] += G[i, c] * X[src, c]
                DX[src, c] += K[c, j] * G[i, c]
    return dx, dk
